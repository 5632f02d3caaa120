import * as zlib from 'zlib'
import { describe, expect, it } from 'vitest'

import { decodePng, decodePpm } from '../src/image'

function makePpm(width: number, height: number, fill: (x: number, y: number) => number): Buffer {
  let header = Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii')
  let body = Buffer.alloc(width * height * 3)
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let v = fill(x, y)
      body[3 * (y * width + x)] = v
      body[3 * (y * width + x) + 1] = v
      body[3 * (y * width + x) + 2] = v
    }
  }
  return Buffer.concat([header, body])
}

function makePng(width: number, height: number, rgb: Uint8Array): Buffer {
  // filter byte 0 per scanline; CRCs are zero (the decoder does not verify)
  let stride = width * 3
  let raw = Buffer.alloc(height * (stride + 1))
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0
    Buffer.from(rgb.subarray(y * stride, (y + 1) * stride)).copy(raw, y * (stride + 1) + 1)
  }
  let idat = zlib.deflateSync(raw)
  let chunks: Buffer[] = [Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])]
  let ihdr = Buffer.alloc(13)
  ihdr.writeUInt32BE(width, 0)
  ihdr.writeUInt32BE(height, 4)
  ihdr[8] = 8 // bit depth
  ihdr[9] = 2 // color type RGB
  function chunk(type: string, body: Buffer): Buffer {
    let len = Buffer.alloc(4)
    len.writeUInt32BE(body.length, 0)
    return Buffer.concat([len, Buffer.from(type, 'ascii'), body, Buffer.alloc(4)])
  }
  chunks.push(chunk('IHDR', ihdr), chunk('IDAT', idat), chunk('IEND', Buffer.alloc(0)))
  return Buffer.concat(chunks)
}

describe('ppm decoding', () => {
  it('reads a gradient P6', () => {
    let data = makePpm(4, 2, (x, y) => 10 * x + 100 * y)
    let img = decodePpm(data)
    expect(img.width).toBe(4)
    expect(img.height).toBe(2)
    expect(img.pixels[0]).toBeCloseTo(0, 6)
    expect(img.pixels[3]).toBeCloseTo(10 / 255, 6)
    expect(img.pixels[3 * 4]).toBeCloseTo(100 / 255, 6)
  })

  it('rejects other magics', () => {
    expect(() => decodePpm(Buffer.from('P3\n1 1\n255\n0 0 0', 'ascii'))).toThrow()
  })

  it('rejects truncated payloads', () => {
    let data = makePpm(4, 4, () => 0)
    expect(() => decodePpm(data.subarray(0, data.length - 5))).toThrow(/truncated/)
  })
})

describe('png decoding', () => {
  it('reads an 8-bit RGB PNG', () => {
    let rgb = new Uint8Array(2 * 2 * 3)
    rgb.set([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30])
    let img = decodePng(makePng(2, 2, rgb))
    expect(img.width).toBe(2)
    expect(img.height).toBe(2)
    expect(img.pixels[0]).toBeCloseTo(1, 6)
    expect(img.pixels[1]).toBeCloseTo(0, 6)
    expect(img.pixels[3 * 3]).toBeCloseTo(10 / 255, 6)
    expect(img.pixels[3 * 3 + 2]).toBeCloseTo(30 / 255, 6)
  })

  it('rejects non-png data', () => {
    expect(() => decodePng(Buffer.from('hello'))).toThrow(/not a PNG/)
  })
})
