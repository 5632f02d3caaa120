import * as fs from 'fs'

/** Teacher-knowledge payload: K per-view descriptors of C_t channels. */
export interface TeacherKnowledge {
  shapeId: string
  numViews: number
  channels: number
  /** row-major [numViews][channels] */
  descriptors: Float32Array
}

const MAGIC = 'MVTK'
const VERSION = 1

/**
 * Binary layout (little-endian): magic, u32 version, u16 shape-id length,
 * shape-id bytes, u32 K, u32 C_t, K*C_t f32, u8 has_global (0),
 * u8 has_logits (0). Matches the trainer's reader byte for byte.
 */
export function encodeTkd(tk: TeacherKnowledge): Buffer {
  if (tk.descriptors.length !== tk.numViews * tk.channels) {
    throw new Error('descriptor length does not match K * C_t')
  }
  let sid = Buffer.from(tk.shapeId, 'utf-8')
  let head = Buffer.alloc(4 + 4 + 2)
  head.write(MAGIC, 0, 'ascii')
  head.writeUInt32LE(VERSION, 4)
  head.writeUInt16LE(sid.length, 8)
  let dims = Buffer.alloc(8)
  dims.writeUInt32LE(tk.numViews, 0)
  dims.writeUInt32LE(tk.channels, 4)
  let body = Buffer.alloc(tk.descriptors.length * 4)
  for (let i = 0; i < tk.descriptors.length; i++) {
    body.writeFloatLE(tk.descriptors[i], 4 * i)
  }
  let flags = Buffer.from([0, 0]) // no global feature, no logits
  return Buffer.concat([head, sid, dims, body, flags])
}

export function decodeTkd(data: Buffer): TeacherKnowledge {
  if (data.subarray(0, 4).toString('ascii') !== MAGIC) throw new Error('bad magic')
  if (data.readUInt32LE(4) !== VERSION) throw new Error('unsupported version')
  let sidLen = data.readUInt16LE(8)
  let shapeId = data.subarray(10, 10 + sidLen).toString('utf-8')
  let pos = 10 + sidLen
  let numViews = data.readUInt32LE(pos)
  let channels = data.readUInt32LE(pos + 4)
  pos += 8
  let descriptors = new Float32Array(numViews * channels)
  for (let i = 0; i < descriptors.length; i++) {
    descriptors[i] = data.readFloatLE(pos + 4 * i)
  }
  return { shapeId, numViews, channels, descriptors }
}

export function writeTkd(tk: TeacherKnowledge, path: string): void {
  let tmp = `${path}.tmp${process.pid}`
  fs.writeFileSync(tmp, encodeTkd(tk))
  fs.renameSync(tmp, path)
}
