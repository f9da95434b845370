/**
 * Writer for the `.ommp` feature-pack container consumed by the
 * maskmatch engine. All integers little-endian; layout:
 *
 *   magic "OMMP" | version u16 | direction u8 | d u16
 *   | H_s W_s H_d W_d u16 | N u16 | flags u8 (bit0 visible, bit1 gt)
 *   | source features f32 row-major | dest features f32
 *   | source mask RLE | N candidate RLEs | [gt_index u16, gt mask RLE]
 *
 * An RLE block is: width u16, height u16, run count u32, then u32 runs
 * alternating background/foreground per row, each row starting with a
 * background run (zero-length when the row opens with foreground).
 */

export interface FeatureGrid {
  height: number;
  width: number;
  dim: number;
  /** row-major, height * width * dim values */
  data: Float32Array;
}

export interface BinaryMask {
  height: number;
  width: number;
  /** row-major, 0 = background, nonzero = foreground */
  data: Uint8Array;
}

export interface PackData {
  direction: 'ego2exo' | 'exo2ego';
  sourceFeatures: FeatureGrid;
  destFeatures: FeatureGrid;
  sourceMask: BinaryMask;
  candidates: BinaryMask[];
  visible: boolean;
  gtIndex?: number;
  gtMask?: BinaryMask;
}

export const PACK_MAGIC = 'OMMP';
export const PACK_VERSION = 1;

export function encodeRuns(mask: BinaryMask): number[] {
  const { width, height, data } = mask;
  const runs: number[] = [];
  for (let y = 0; y < height; y++) {
    let x = 0;
    if (data[y * width] !== 0) runs.push(0);
    while (x < width) {
      const fg = data[y * width + x] !== 0;
      let len = 0;
      while (x < width && (data[y * width + x] !== 0) === fg) {
        len++;
        x++;
      }
      runs.push(len);
    }
  }
  return runs;
}

export function maskArea(mask: BinaryMask): number {
  let area = 0;
  for (const v of mask.data) if (v !== 0) area++;
  return area;
}

class ByteSink {
  private chunks: Buffer[] = [];

  u8(v: number) {
    const b = Buffer.alloc(1);
    b.writeUInt8(v);
    this.chunks.push(b);
  }

  u16(v: number) {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(v);
    this.chunks.push(b);
  }

  u32(v: number) {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    this.chunks.push(b);
  }

  raw(buf: Buffer) {
    this.chunks.push(buf);
  }

  concat(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

function writeMask(sink: ByteSink, mask: BinaryMask) {
  const runs = encodeRuns(mask);
  sink.u16(mask.width);
  sink.u16(mask.height);
  sink.u32(runs.length);
  const buf = Buffer.alloc(4 * runs.length);
  runs.forEach((r, i) => buf.writeUInt32LE(r, 4 * i));
  sink.raw(buf);
}

function writeFeatures(sink: ByteSink, grid: FeatureGrid) {
  const expected = grid.height * grid.width * grid.dim;
  if (grid.data.length !== expected) {
    throw new Error(
      `feature grid ${grid.height}x${grid.width}x${grid.dim} expects ${expected} values, got ${grid.data.length}`,
    );
  }
  const buf = Buffer.alloc(4 * grid.data.length);
  grid.data.forEach((v, i) => buf.writeFloatLE(v, 4 * i));
  sink.raw(buf);
}

export function serializePack(pack: PackData): Buffer {
  if (pack.sourceFeatures.dim !== pack.destFeatures.dim) {
    throw new Error(
      `feature dims differ: ${pack.sourceFeatures.dim} vs ${pack.destFeatures.dim}`,
    );
  }
  const hasGt = pack.gtIndex !== undefined;
  if (hasGt && (pack.gtIndex! < 0 || pack.gtIndex! >= pack.candidates.length)) {
    throw new Error(`gt index ${pack.gtIndex} out of range for ${pack.candidates.length} candidates`);
  }
  if (hasGt !== (pack.gtMask !== undefined)) {
    throw new Error('gtIndex and gtMask must be provided together');
  }
  if (!pack.visible && hasGt) {
    throw new Error('an invisible sample must not carry ground truth');
  }
  const sink = new ByteSink();
  sink.raw(Buffer.from(PACK_MAGIC, 'ascii'));
  sink.u16(PACK_VERSION);
  sink.u8(pack.direction === 'ego2exo' ? 0 : 1);
  sink.u16(pack.sourceFeatures.dim);
  sink.u16(pack.sourceFeatures.height);
  sink.u16(pack.sourceFeatures.width);
  sink.u16(pack.destFeatures.height);
  sink.u16(pack.destFeatures.width);
  sink.u16(pack.candidates.length);
  sink.u8((pack.visible ? 1 : 0) | (hasGt ? 2 : 0));
  writeFeatures(sink, pack.sourceFeatures);
  writeFeatures(sink, pack.destFeatures);
  writeMask(sink, pack.sourceMask);
  for (const candidate of pack.candidates) writeMask(sink, candidate);
  if (hasGt) {
    sink.u16(pack.gtIndex!);
    writeMask(sink, pack.gtMask!);
  }
  return sink.concat();
}
