import * as fs from 'fs'
import * as zlib from 'zlib'

/** Decoded image: row-major RGB floats in [0, 1]. */
export interface RawImage {
  width: number
  height: number
  /** length = width * height * 3 */
  pixels: Float32Array
}

function grayToRgb(width: number, height: number, gray: Uint8Array): RawImage {
  let pixels = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    let v = gray[i] / 255
    pixels[3 * i] = v
    pixels[3 * i + 1] = v
    pixels[3 * i + 2] = v
  }
  return { width, height, pixels }
}

/** Binary PPM (P6) / PGM (P5), maxval 255. */
export function decodePpm(data: Buffer): RawImage {
  let magic = data.subarray(0, 2).toString('ascii')
  if (magic !== 'P6' && magic !== 'P5') {
    throw new Error(`not a binary PPM/PGM (magic ${JSON.stringify(magic)})`)
  }
  let fields: number[] = []
  let pos = 2
  while (fields.length < 3) {
    while (pos < data.length && /\s/.test(String.fromCharCode(data[pos]))) pos++
    if (data[pos] === 0x23) {
      // comment line
      while (pos < data.length && data[pos] !== 0x0a) pos++
      continue
    }
    let start = pos
    while (pos < data.length && !/\s/.test(String.fromCharCode(data[pos]))) pos++
    fields.push(parseInt(data.subarray(start, pos).toString('ascii'), 10))
  }
  pos++ // single whitespace after maxval
  let [width, height, maxval] = fields
  if (!Number.isFinite(width) || !Number.isFinite(height) || maxval !== 255) {
    throw new Error('malformed PPM header')
  }
  let channels = magic === 'P6' ? 3 : 1
  let need = width * height * channels
  if (data.length - pos < need) throw new Error('truncated PPM payload')
  let payload = data.subarray(pos, pos + need)
  if (channels === 1) return grayToRgb(width, height, payload)
  let pixels = new Float32Array(width * height * 3)
  for (let i = 0; i < pixels.length; i++) pixels[i] = payload[i] / 255
  return { width, height, pixels }
}

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

function paeth(a: number, b: number, c: number): number {
  let p = a + b - c
  let pa = Math.abs(p - a)
  let pb = Math.abs(p - b)
  let pc = Math.abs(p - c)
  if (pa <= pb && pa <= pc) return a
  if (pb <= pc) return b
  return c
}

/** Minimal PNG decoder: 8-bit depth, color types 0/2/4/6, no interlacing. */
export function decodePng(data: Buffer): RawImage {
  if (!data.subarray(0, 8).equals(PNG_SIGNATURE)) throw new Error('not a PNG')
  let pos = 8
  let width = 0
  let height = 0
  let colorType = -1
  let idat: Buffer[] = []
  while (pos + 8 <= data.length) {
    let length = data.readUInt32BE(pos)
    let type = data.subarray(pos + 4, pos + 8).toString('ascii')
    let body = data.subarray(pos + 8, pos + 8 + length)
    pos += 12 + length // length + type + body + crc (crc not verified)
    if (type === 'IHDR') {
      width = body.readUInt32BE(0)
      height = body.readUInt32BE(4)
      let bitDepth = body[8]
      colorType = body[9]
      let interlace = body[12]
      if (bitDepth !== 8) throw new Error(`unsupported PNG bit depth ${bitDepth}`)
      if (![0, 2, 4, 6].includes(colorType)) {
        throw new Error(`unsupported PNG color type ${colorType}`)
      }
      if (interlace !== 0) throw new Error('interlaced PNG not supported')
    } else if (type === 'IDAT') {
      idat.push(body)
    } else if (type === 'IEND') {
      break
    }
  }
  if (!width || !height) throw new Error('PNG missing IHDR')
  let channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType as 0 | 2 | 4 | 6]!
  let raw = zlib.inflateSync(Buffer.concat(idat))
  let stride = width * channels
  if (raw.length < height * (stride + 1)) throw new Error('truncated PNG payload')
  let out = new Uint8Array(height * stride)
  for (let y = 0; y < height; y++) {
    let filter = raw[y * (stride + 1)]
    let line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1))
    let row = out.subarray(y * stride, (y + 1) * stride)
    let prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null
    for (let x = 0; x < stride; x++) {
      let a = x >= channels ? row[x - channels] : 0
      let b = prev ? prev[x] : 0
      let c = x >= channels && prev ? prev[x - channels] : 0
      let v = line[x]
      if (filter === 0) row[x] = v
      else if (filter === 1) row[x] = (v + a) & 0xff
      else if (filter === 2) row[x] = (v + b) & 0xff
      else if (filter === 3) row[x] = (v + ((a + b) >> 1)) & 0xff
      else if (filter === 4) row[x] = (v + paeth(a, b, c)) & 0xff
      else throw new Error(`unknown PNG filter ${filter}`)
    }
  }
  let pixels = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    let r: number, g: number, b: number
    if (channels === 1) r = g = b = out[i]
    else if (channels === 2) r = g = b = out[2 * i]
    else if (channels === 3) {
      r = out[3 * i]; g = out[3 * i + 1]; b = out[3 * i + 2]
    } else {
      r = out[4 * i]; g = out[4 * i + 1]; b = out[4 * i + 2]
    }
    pixels[3 * i] = r / 255
    pixels[3 * i + 1] = g / 255
    pixels[3 * i + 2] = b / 255
  }
  return { width, height, pixels }
}

export function readImage(path: string): RawImage {
  let data = fs.readFileSync(path)
  if (data[0] === 0x89) return decodePng(data)
  return decodePpm(data)
}
