/** PNG loading for images and binary masks. */

import { readFileSync, writeFileSync } from 'fs';
import { PNG } from 'pngjs';

import type { BinaryMask } from './pack.js';

export interface RgbImage {
  height: number;
  width: number;
  /** row-major RGB, 3 bytes per pixel */
  data: Uint8Array;
}

export function loadPng(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path));
  const out = new Uint8Array(png.height * png.width * 3);
  for (let i = 0; i < png.height * png.width; i++) {
    out[3 * i] = png.data[4 * i];
    out[3 * i + 1] = png.data[4 * i + 1];
    out[3 * i + 2] = png.data[4 * i + 2];
  }
  return { height: png.height, width: png.width, data: out };
}

/** Any pixel brighter than half-gray counts as foreground. */
export function loadMaskPng(path: string): BinaryMask {
  const img = loadPng(path);
  const data = new Uint8Array(img.height * img.width);
  for (let i = 0; i < data.length; i++) {
    const luma = (img.data[3 * i] + img.data[3 * i + 1] + img.data[3 * i + 2]) / 3;
    data[i] = luma > 127 ? 1 : 0;
  }
  return { height: img.height, width: img.width, data };
}

export function savePng(path: string, img: RgbImage): void {
  const png = new PNG({ width: img.width, height: img.height });
  for (let i = 0; i < img.height * img.width; i++) {
    png.data[4 * i] = img.data[3 * i];
    png.data[4 * i + 1] = img.data[3 * i + 1];
    png.data[4 * i + 2] = img.data[3 * i + 2];
    png.data[4 * i + 3] = 255;
  }
  writeFileSync(path, PNG.sync.write(png));
}
