/**
 * Class-agnostic mask proposals from color-region segmentation.
 *
 * Pixels are quantized into coarse color bins; connected components of
 * a non-background bin become proposals, ranked by area (a proxy for
 * proposal confidence) and capped at maxCandidates. This stands in for
 * a learned proposal model and is fully deterministic.
 */

import type { RgbImage } from './image.js';
import type { BinaryMask } from './pack.js';

export interface ProposalConfig {
  /** quantization levels per channel */
  colorLevels?: number;
  /** minimum component area in pixels */
  minArea?: number;
}

export interface Proposal {
  mask: BinaryMask;
  area: number;
}

function quantize(image: RgbImage, levels: number): Uint16Array {
  const bins = new Uint16Array(image.height * image.width);
  const scale = levels / 256;
  for (let i = 0; i < bins.length; i++) {
    const r = Math.floor(image.data[3 * i] * scale);
    const g = Math.floor(image.data[3 * i + 1] * scale);
    const b = Math.floor(image.data[3 * i + 2] * scale);
    bins[i] = (r * levels + g) * levels + b;
  }
  return bins;
}

export function proposeMasks(
  image: RgbImage,
  maxCandidates: number,
  config: ProposalConfig = {},
): Proposal[] {
  const levels = config.colorLevels ?? 4;
  const minArea = config.minArea ?? 64;
  const { height, width } = image;
  const bins = quantize(image, levels);

  // background = the most frequent bin
  const counts = new Map<number, number>();
  for (const b of bins) counts.set(b, (counts.get(b) ?? 0) + 1);
  let background = -1;
  let best = -1;
  for (const [bin, count] of counts) {
    if (count > best) {
      best = count;
      background = bin;
    }
  }

  const labels = new Int32Array(height * width).fill(-1);
  const proposals: Proposal[] = [];
  const queue = new Int32Array(height * width);
  for (let start = 0; start < labels.length; start++) {
    if (labels[start] >= 0 || bins[start] === background) continue;
    const bin = bins[start];
    let head = 0;
    let tail = 0;
    queue[tail++] = start;
    labels[start] = proposals.length;
    const pixels: number[] = [];
    while (head < tail) {
      const i = queue[head++];
      pixels.push(i);
      const x = i % width;
      const y = (i - x) / width;
      for (const [nx, ny] of [
        [x - 1, y],
        [x + 1, y],
        [x, y - 1],
        [x, y + 1],
      ]) {
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const j = ny * width + nx;
        if (labels[j] < 0 && bins[j] === bin) {
          labels[j] = proposals.length;
          queue[tail++] = j;
        }
      }
    }
    if (pixels.length >= minArea) {
      const data = new Uint8Array(height * width);
      for (const i of pixels) data[i] = 1;
      proposals.push({ mask: { height, width, data }, area: pixels.length });
    }
  }

  proposals.sort((a, b) => b.area - a.area);
  return proposals.slice(0, maxCandidates);
}
