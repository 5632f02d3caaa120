import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

/**
 * A backbone turns a batch of view images [K, H, W, 3] into post-GAP
 * descriptors [K, C_t]: forward to the last convolutional feature map, then
 * average over the spatial dimensions.
 */
export interface Backbone {
  name: string
  channels: number
  extract(batch: tf.Tensor4D): tf.Tensor2D
  dispose(): void
}

/** mulberry32: tiny deterministic PRNG so the built-in weights are fixed. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function uniformTensor(rand: () => number, shape: number[], limit: number): tf.Tensor {
  let n = shape.reduce((a, b) => a * b, 1)
  let values = new Float32Array(n)
  for (let i = 0; i < n; i++) values[i] = (2 * rand() - 1) * limit
  return tf.tensor(values, shape)
}

/**
 * Built-in three-layer CNN with seeded weights. There is no pretraining in
 * this sandbox; the fixed random filters still give deterministic,
 * view-discriminative descriptors, and any real tfjs layers model can be
 * substituted via a model.json path.
 */
export function createTinyBackbone(ct: number, seed = 7): Backbone {
  let rand = mulberry32(seed)
  let widths = [3, 16, 32, ct]
  let kernels: tf.Tensor[] = []
  let biases: tf.Tensor[] = []
  for (let i = 0; i + 1 < widths.length; i++) {
    let fanIn = widths[i] * 9
    let fanOut = widths[i + 1] * 9
    let limit = Math.sqrt(6 / (fanIn + fanOut))
    kernels.push(uniformTensor(rand, [3, 3, widths[i], widths[i + 1]], limit))
    biases.push(uniformTensor(rand, [widths[i + 1]], 0.05))
  }
  return {
    name: 'tiny',
    channels: ct,
    extract(batch: tf.Tensor4D): tf.Tensor2D {
      return tf.tidy(() => {
        let x = batch as tf.Tensor4D
        for (let i = 0; i < kernels.length; i++) {
          x = tf.add(
            tf.conv2d(x, kernels[i] as tf.Tensor4D, 2, 'same'),
            biases[i],
          ) as tf.Tensor4D
          if (i + 1 < kernels.length) x = tf.relu(x)
        }
        return tf.mean(x, [1, 2]) as tf.Tensor2D
      })
    },
    dispose() {
      kernels.forEach(k => k.dispose())
      biases.forEach(b => b.dispose())
    },
  }
}

/** Load a tfjs layers model from disk (model.json + weight shards). */
async function loadLayersModelFromDisk(modelJsonPath: string): Promise<tf.LayersModel> {
  let dir = path.dirname(modelJsonPath)
  let artifact = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'))
  let manifest = artifact.weightsManifest as Array<{
    paths: string[]
    weights: tf.io.WeightsManifestEntry[]
  }>
  let specs: tf.io.WeightsManifestEntry[] = []
  let buffers: Buffer[] = []
  for (let group of manifest) {
    specs.push(...group.weights)
    for (let rel of group.paths) {
      buffers.push(fs.readFileSync(path.join(dir, rel)))
    }
  }
  let weightData = Buffer.concat(buffers)
  let handler = tf.io.fromMemory({
    modelTopology: artifact.modelTopology,
    weightSpecs: specs,
    weightData: weightData.buffer.slice(
      weightData.byteOffset,
      weightData.byteOffset + weightData.byteLength,
    ),
  })
  return tf.loadLayersModel(handler)
}

/** Sub-model ending at the last 4-D (conv) layer output, followed by GAP. */
function gapBackbone(name: string, model: tf.LayersModel): Backbone {
  let convLayer: tf.layers.Layer | null = null
  for (let layer of model.layers) {
    let shape = layer.outputShape as Array<number | null>
    if (Array.isArray(shape) && shape.length === 4) convLayer = layer
  }
  if (!convLayer) throw new Error(`backbone ${name} has no 4-D feature map`)
  let features = tf.model({
    inputs: model.inputs,
    outputs: convLayer.output as tf.SymbolicTensor,
  })
  let channels = (convLayer.outputShape as Array<number | null>)[3]
  if (!channels) throw new Error(`backbone ${name} has dynamic channel count`)
  return {
    name,
    channels,
    extract(batch: tf.Tensor4D): tf.Tensor2D {
      return tf.tidy(() => {
        let maps = features.predict(batch) as tf.Tensor4D
        return tf.mean(maps, [1, 2]) as tf.Tensor2D
      })
    },
    dispose() {
      model.dispose()
    },
  }
}

export async function loadBackbone(name: string, ct: number, seed = 7): Promise<Backbone> {
  if (name === 'tiny') return createTinyBackbone(ct, seed)
  if (!fs.existsSync(name)) {
    throw new Error(`backbone load failure: ${name} is neither 'tiny' nor a model.json path`)
  }
  try {
    let model = await loadLayersModelFromDisk(name)
    return gapBackbone(name, model)
  } catch (err) {
    throw new Error(`backbone load failure: ${(err as Error).message}`)
  }
}
