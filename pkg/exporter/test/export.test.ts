import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { afterAll, describe, expect, it } from 'vitest'

import { createTinyBackbone } from '../src/backbone'
import { groupViewImages, runExport } from '../src/export'
import { decodeTkd } from '../src/tkd'
import * as tf from '@tensorflow/tfjs'

let tmpDirs: string[] = []

function tmpDir(): string {
  let dir = fs.mkdtempSync(path.join(os.tmpdir(), 'tkd-exporter-'))
  tmpDirs.push(dir)
  return dir
}

afterAll(() => {
  for (let dir of tmpDirs) fs.rmSync(dir, { recursive: true, force: true })
})

function writePpm(dir: string, name: string, size: number, value: (x: number, y: number) => number) {
  let header = Buffer.from(`P6\n${size} ${size}\n255\n`, 'ascii')
  let body = Buffer.alloc(size * size * 3)
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      let v = value(x, y)
      body.fill(v, 3 * (y * size + x), 3 * (y * size + x) + 3)
    }
  }
  fs.writeFileSync(path.join(dir, name), Buffer.concat([header, body]))
}

function fillViews(dir: string, shapeId: string, views: number, size = 32, offset = 0) {
  for (let k = 0; k < views; k++) {
    writePpm(dir, `${shapeId}_v${k}.ppm`, size, (x, y) => (x * 7 + y * 3 + 40 * k + offset) % 256)
  }
}

describe('view grouping', () => {
  it('groups complete shapes and sorts ids', () => {
    let dir = tmpDir()
    fillViews(dir, 'b_shape', 3)
    fillViews(dir, 'a_shape', 3)
    let grouped = groupViewImages(dir, 3)
    expect([...grouped.keys()]).toEqual(['a_shape', 'b_shape'])
    expect(grouped.get('a_shape')).toHaveLength(3)
  })

  it('fails on a missing view', () => {
    let dir = tmpDir()
    fillViews(dir, 'shape', 3)
    fs.rmSync(path.join(dir, 'shape_v1.ppm'))
    expect(() => groupViewImages(dir, 3)).toThrow(/missing view image: shape_v1/)
  })

  it('fails on an empty directory', () => {
    expect(() => groupViewImages(tmpDir(), 3)).toThrow(/no <shape>_v<k> images/)
  })
})

describe('tiny backbone', () => {
  it('is deterministic for a fixed seed', async () => {
    let input = tf.randomUniform([2, 32, 32, 3], 0, 1, 'float32', 11) as tf.Tensor4D
    let a = createTinyBackbone(8, 7)
    let b = createTinyBackbone(8, 7)
    let da = await a.extract(input).data()
    let db = await b.extract(input).data()
    expect([...da]).toEqual([...db])
    let c = createTinyBackbone(8, 8)
    let dc = await c.extract(input).data()
    expect([...dc]).not.toEqual([...da])
    a.dispose(); b.dispose(); c.dispose(); input.dispose()
  })
})

describe('export job', () => {
  it('writes one parseable .tkd per shape', async () => {
    let images = tmpDir()
    let out = tmpDir()
    fillViews(images, 'cube_0000', 4)
    fillViews(images, 'cone_0001', 4, 32, 9)
    let written = await runExport({
      imagesDir: images, outDir: out, backbone: 'tiny', views: 4, ct: 16,
    })
    expect(written).toEqual(['cone_0001', 'cube_0000'])
    let tk = decodeTkd(fs.readFileSync(path.join(out, 'cube_0000.tkd')))
    expect(tk.shapeId).toBe('cube_0000')
    expect(tk.numViews).toBe(4)
    expect(tk.channels).toBe(16)
    expect([...tk.descriptors].every(Number.isFinite)).toBe(true)
  })

  it('is deterministic across runs', async () => {
    let images = tmpDir()
    fillViews(images, 'shape', 4)
    let out1 = tmpDir()
    let out2 = tmpDir()
    await runExport({ imagesDir: images, outDir: out1, backbone: 'tiny', views: 4, ct: 8 })
    await runExport({ imagesDir: images, outDir: out2, backbone: 'tiny', views: 4, ct: 8 })
    let a = fs.readFileSync(path.join(out1, 'shape.tkd'))
    let b = fs.readFileSync(path.join(out2, 'shape.tkd'))
    expect(a.equals(b)).toBe(true)
  })

  it('gives identical rows for constant-white views', async () => {
    let images = tmpDir()
    let out = tmpDir()
    for (let k = 0; k < 3; k++) writePpm(images, `flat_v${k}.ppm`, 32, () => 255)
    await runExport({ imagesDir: images, outDir: out, backbone: 'tiny', views: 3, ct: 8 })
    let tk = decodeTkd(fs.readFileSync(path.join(out, 'flat.tkd')))
    let first = [...tk.descriptors.subarray(0, 8)]
    for (let k = 1; k < 3; k++) {
      expect([...tk.descriptors.subarray(8 * k, 8 * (k + 1))]).toEqual(first)
    }
  })

  it('rejects inconsistent image sizes', async () => {
    let images = tmpDir()
    fillViews(images, 'shape', 2, 32)
    writePpm(images, 'shape_v1.ppm', 16, () => 0) // overwrite with a smaller view
    await expect(
      runExport({ imagesDir: images, outDir: tmpDir(), backbone: 'tiny', views: 2, ct: 8 }),
    ).rejects.toThrow(/size mismatch/)
  })

  it('reports unknown backbones as load failures', async () => {
    let images = tmpDir()
    fillViews(images, 'shape', 1)
    await expect(
      runExport({ imagesDir: images, outDir: tmpDir(), backbone: 'resnet-nope', views: 1, ct: 8 }),
    ).rejects.toThrow(/backbone load failure/)
  })
})
