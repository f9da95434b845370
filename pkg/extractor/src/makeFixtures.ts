/**
 * Generates the two-view smoke fixture: a pair of PNG scenes showing
 * the same colored objects at different positions, the source object
 * mask, a destination ground-truth mask, and a jobs.json.
 *
 *   node dist/makeFixtures.js <outputDir>
 */

import { mkdirSync, writeFileSync } from 'fs';
import path from 'path';

import { savePng, type RgbImage } from './image.js';

interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
  color: [number, number, number];
}

const SIZE = 96;

const OBJECTS: { color: [number, number, number]; source: [number, number]; dest: [number, number] }[] = [
  { color: [200, 60, 40], source: [10, 12], dest: [52, 60] },
  { color: [40, 170, 70], source: [55, 20], dest: [14, 18] },
  { color: [50, 90, 210], source: [20, 60], dest: [60, 14] },
  { color: [220, 190, 40], source: [62, 64], dest: [18, 58] },
];
const OBJ_SIZE: [number, number] = [22, 18];

function render(rects: Rect[]): RgbImage {
  const data = new Uint8Array(SIZE * SIZE * 3);
  for (let i = 0; i < SIZE * SIZE; i++) {
    data[3 * i] = 30;
    data[3 * i + 1] = 32;
    data[3 * i + 2] = 34;
  }
  for (const r of rects) {
    for (let y = r.y; y < r.y + r.h; y++) {
      for (let x = r.x; x < r.x + r.w; x++) {
        const i = 3 * (y * SIZE + x);
        data[i] = r.color[0];
        data[i + 1] = r.color[1];
        data[i + 2] = r.color[2];
      }
    }
  }
  return { height: SIZE, width: SIZE, data };
}

function renderMask(rect: Rect): RgbImage {
  const data = new Uint8Array(SIZE * SIZE * 3);
  for (let y = rect.y; y < rect.y + rect.h; y++) {
    for (let x = rect.x; x < rect.x + rect.w; x++) {
      const i = 3 * (y * SIZE + x);
      data[i] = data[i + 1] = data[i + 2] = 255;
    }
  }
  return { height: SIZE, width: SIZE, data };
}

export function makeFixtures(outDir: string): void {
  mkdirSync(outDir, { recursive: true });
  const [w, h] = OBJ_SIZE;
  const sourceRects = OBJECTS.map((o) => ({ x: o.source[0], y: o.source[1], w, h, color: o.color }));
  const destRects = OBJECTS.map((o) => ({ x: o.dest[0], y: o.dest[1], w, h, color: o.color }));

  savePng(path.join(outDir, 'source.png'), render(sourceRects));
  savePng(path.join(outDir, 'dest.png'), render(destRects));
  // the query object is the first (red) rectangle
  savePng(path.join(outDir, 'source_mask.png'), renderMask(sourceRects[0]));
  savePng(path.join(outDir, 'dest_gt.png'), renderMask(destRects[0]));

  const jobs = {
    backbone: { kind: 'color-grid', patchSize: 8 },
    proposals: { colorLevels: 4, minArea: 64 },
    jobs: [
      {
        sourceImage: 'source.png',
        destImage: 'dest.png',
        direction: 'ego2exo',
        sourceMask: 'source_mask.png',
        output: 'pair0.ommp',
        gtMask: 'dest_gt.png',
      },
      {
        sourceImage: 'dest.png',
        destImage: 'source.png',
        direction: 'exo2ego',
        sourceMask: 'dest_gt.png',
        output: 'pair1.ommp',
      },
    ],
  };
  writeFileSync(path.join(outDir, 'jobs.json'), JSON.stringify(jobs, null, 2) + '\n');
  console.log(`fixtures written to ${outDir}`);
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('makeFixtures.js')) {
  makeFixtures(process.argv[2] ?? 'test/fixtures');
}
