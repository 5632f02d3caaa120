import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { Backbone, loadBackbone } from './backbone'
import { RawImage, readImage } from './image'
import { writeTkd } from './tkd'

export interface ExportJob {
  /** directory with K images per shape, named <shape_id>_v<k>.(ppm|png) */
  imagesDir: string
  outDir: string
  /** 'tiny' or a path to a tfjs layers model.json */
  backbone: string
  views: number
  /** descriptor channels for the built-in backbone; real models use their own */
  ct: number
  seed?: number
}

const VIEW_PATTERN = /^(.+)_v(\d+)\.(ppm|pgm|png)$/

export function groupViewImages(imagesDir: string, views: number): Map<string, string[]> {
  let byShape = new Map<string, Map<number, string>>()
  for (let name of fs.readdirSync(imagesDir).sort()) {
    let match = VIEW_PATTERN.exec(name)
    if (!match) continue
    let [, shapeId, viewStr] = match
    let view = parseInt(viewStr, 10)
    if (!byShape.has(shapeId)) byShape.set(shapeId, new Map())
    byShape.get(shapeId)!.set(view, path.join(imagesDir, name))
  }
  if (byShape.size === 0) {
    throw new Error(`no <shape>_v<k> images found in ${imagesDir}`)
  }
  let grouped = new Map<string, string[]>()
  for (let [shapeId, viewMap] of [...byShape.entries()].sort()) {
    let paths: string[] = []
    for (let k = 0; k < views; k++) {
      let p = viewMap.get(k)
      if (!p) throw new Error(`missing view image: ${shapeId}_v${k}`)
      paths.push(p)
    }
    if (viewMap.size !== views) {
      throw new Error(`${shapeId}: expected exactly ${views} views, found ${viewMap.size}`)
    }
    grouped.set(shapeId, paths)
  }
  return grouped
}

function batchTensor(images: RawImage[]): tf.Tensor4D {
  let { width, height } = images[0]
  let data = new Float32Array(images.length * height * width * 3)
  images.forEach((img, i) => data.set(img.pixels, i * height * width * 3))
  return tf.tensor4d(data, [images.length, height, width, 3])
}

export async function runExport(job: ExportJob): Promise<string[]> {
  let grouped = groupViewImages(job.imagesDir, job.views)
  fs.mkdirSync(job.outDir, { recursive: true })
  let backbone: Backbone = await loadBackbone(job.backbone, job.ct, job.seed ?? 7)
  let size: [number, number] | null = null
  let written: string[] = []
  try {
    for (let [shapeId, paths] of grouped) {
      let images = paths.map(readImage)
      for (let img of images) {
        if (!size) size = [img.width, img.height]
        if (img.width !== size[0] || img.height !== size[1]) {
          throw new Error(
            `size mismatch: expected ${size[0]}x${size[1]}, ` +
            `got ${img.width}x${img.height} for ${shapeId}`,
          )
        }
      }
      let batch = batchTensor(images)
      let descriptors = backbone.extract(batch)
      let values = (await descriptors.data()) as Float32Array
      batch.dispose()
      descriptors.dispose()
      writeTkd(
        {
          shapeId,
          numViews: job.views,
          channels: backbone.channels,
          descriptors: Float32Array.from(values),
        },
        path.join(job.outDir, `${shapeId}.tkd`),
      )
      written.push(shapeId)
    }
  } finally {
    backbone.dispose()
  }
  return written
}
