/**
 * Dense per-patch feature backbones.
 *
 * The engine only needs an H x W x d grid of descriptors per image.
 * Two providers:
 *
 *  - `color-grid`: built-in, dependency-free, deterministic patch
 *    statistics. Good enough for format/smoke testing and for scenes
 *    whose objects differ in appearance.
 *  - `tfjs`: a converted vision transformer (patch-token) graph model
 *    loaded from a local path via @tensorflow/tfjs. Weights are never
 *    downloaded implicitly; a missing module or model is a hard error
 *    with a remediation hint.
 */

import type { RgbImage } from './image.js';
import type { FeatureGrid } from './pack.js';

export interface BackboneConfig {
  kind: 'color-grid' | 'tfjs';
  /** square patch size in pixels for color-grid (default 8) */
  patchSize?: number;
  /** tfjs graph-model directory or model.json path */
  modelPath?: string;
}

export interface Backbone {
  name: string;
  dim: number;
  extract(image: RgbImage): Promise<FeatureGrid>;
}

export const COLOR_GRID_DIM = 16;

class ColorGridBackbone implements Backbone {
  name = 'color-grid';
  dim = COLOR_GRID_DIM;

  constructor(private patchSize: number) {}

  async extract(image: RgbImage): Promise<FeatureGrid> {
    const p = this.patchSize;
    const gh = Math.floor(image.height / p);
    const gw = Math.floor(image.width / p);
    if (gh < 1 || gw < 1) {
      throw new Error(`image ${image.height}x${image.width} smaller than one ${p}px patch`);
    }

    const lumaAt = (x: number, y: number) => {
      const i = 3 * (y * image.width + x);
      return (image.data[i] + image.data[i + 1] + image.data[i + 2]) / (3 * 255);
    };
    let globalLuma = 0;
    for (let y = 0; y < image.height; y++)
      for (let x = 0; x < image.width; x++) globalLuma += lumaAt(x, y);
    globalLuma /= image.height * image.width;

    const data = new Float32Array(gh * gw * this.dim);
    for (let gy = 0; gy < gh; gy++) {
      for (let gx = 0; gx < gw; gx++) {
        const stats = this.patchStats(image, gx * p, gy * p, p, lumaAt, globalLuma);
        data.set(stats, (gy * gw + gx) * this.dim);
      }
    }
    return { height: gh, width: gw, dim: this.dim, data };
  }

  private patchStats(
    image: RgbImage,
    x0: number,
    y0: number,
    p: number,
    lumaAt: (x: number, y: number) => number,
    globalLuma: number,
  ): Float32Array {
    const n = p * p;
    const mean = [0, 0, 0];
    const sq = [0, 0, 0];
    let lumaMin = 1;
    let lumaMax = 0;
    let gradX = 0;
    let gradY = 0;
    let above = 0;
    for (let dy = 0; dy < p; dy++) {
      for (let dx = 0; dx < p; dx++) {
        const x = x0 + dx;
        const y = y0 + dy;
        const i = 3 * (y * image.width + x);
        for (let c = 0; c < 3; c++) {
          const v = image.data[i + c] / 255;
          mean[c] += v;
          sq[c] += v * v;
        }
        const l = lumaAt(x, y);
        lumaMin = Math.min(lumaMin, l);
        lumaMax = Math.max(lumaMax, l);
        if (l > globalLuma) above++;
        if (dx + 1 < p) gradX += Math.abs(lumaAt(x + 1, y) - l);
        if (dy + 1 < p) gradY += Math.abs(lumaAt(x, y + 1) - l);
      }
    }
    const std = mean.map((m, c) => {
      const mu = m / n;
      return Math.sqrt(Math.max(0, sq[c] / n - mu * mu));
    });
    const mu = mean.map((m) => m / n);
    const lumaMean = (mu[0] + mu[1] + mu[2]) / 3;
    const lumaStd = (std[0] + std[1] + std[2]) / 3;
    return Float32Array.from([
      mu[0],
      mu[1],
      mu[2],
      std[0],
      std[1],
      std[2],
      lumaMean,
      lumaStd,
      gradX / (p * (p - 1) || 1),
      gradY / (p * (p - 1) || 1),
      lumaMin,
      lumaMax,
      mu[0] - mu[1],
      mu[1] - mu[2],
      lumaMean - globalLuma,
      above / n,
    ]);
  }
}

class TfjsBackbone implements Backbone {
  name = 'tfjs';
  dim = 0;
  private model: unknown;
  private tf: any;

  constructor(private modelPath: string) {}

  async load(): Promise<void> {
    let tf: any;
    try {
      const optionalModule = '@tensorflow/tfjs';
      tf = await import(optionalModule);
    } catch {
      throw new Error(
        'backbone "tfjs" needs @tensorflow/tfjs installed; ' +
          'run `npm install @tensorflow/tfjs` or use the built-in "color-grid" backbone',
      );
    }
    try {
      this.model = await tf.loadGraphModel(`file://${this.modelPath}`);
    } catch (e) {
      throw new Error(
        `could not load a graph model from ${this.modelPath}: ${String(e)}. ` +
          'Convert your patch-token backbone with tensorflowjs_converter and point ' +
          '--backbone-model at the model.json; weights are never downloaded automatically',
      );
    }
    this.tf = tf;
  }

  async extract(image: RgbImage): Promise<FeatureGrid> {
    const tf = this.tf;
    const model: any = this.model;
    const input = tf.tensor4d(Array.from(image.data, (v: number) => v / 255), [
      1,
      image.height,
      image.width,
      3,
    ]);
    const output = model.predict(input);
    const [, gh, gw, dim] = output.shape;
    const data = Float32Array.from(output.dataSync());
    input.dispose();
    output.dispose();
    this.dim = dim;
    return { height: gh, width: gw, dim, data };
  }
}

export async function createBackbone(config: BackboneConfig): Promise<Backbone> {
  if (config.kind === 'color-grid' || config.kind === undefined) {
    return new ColorGridBackbone(config.patchSize ?? 8);
  }
  if (config.kind === 'tfjs') {
    if (!config.modelPath) {
      throw new Error('backbone "tfjs" requires a modelPath');
    }
    const backbone = new TfjsBackbone(config.modelPath);
    await backbone.load();
    return backbone;
  }
  throw new Error(`unknown backbone kind ${(config as BackboneConfig).kind}`);
}
