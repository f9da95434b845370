/**
 * The jobs file (`--pairs jobs.json`) describes a batch of extractions:
 *
 * {
 *   "backbone":  { "kind": "color-grid", "patchSize": 8 },
 *   "proposals": { "colorLevels": 4, "minArea": 64 },
 *   "jobs": [
 *     {
 *       "sourceImage": "ego.png",
 *       "destImage": "exo.png",
 *       "direction": "ego2exo",
 *       "sourceMask": "ego_mask.png",
 *       "output": "pair0.ommp",
 *       "gtMask": "exo_gt.png"        // optional, for evaluation packs
 *     }
 *   ]
 * }
 *
 * Relative paths resolve against the jobs file's directory, except
 * `output`, which resolves against --out.
 */

import { readFileSync } from 'fs';
import path from 'path';

import type { BackboneConfig } from './backbone.js';
import type { ProposalConfig } from './proposals.js';

export interface ExtractionJob {
  sourceImage: string;
  destImage: string;
  direction: 'ego2exo' | 'exo2ego';
  sourceMask: string;
  output: string;
  gtMask?: string;
}

export interface JobsFile {
  backbone: BackboneConfig;
  proposals: ProposalConfig;
  jobs: ExtractionJob[];
}

export class JobsError extends Error {}

function requireString(obj: Record<string, unknown>, key: string, where: string): string {
  const value = obj[key];
  if (typeof value !== 'string' || !value) {
    throw new JobsError(`${where}: missing or invalid "${key}"`);
  }
  return value;
}

export function parseJobsFile(jobsPath: string): JobsFile {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(jobsPath, 'utf-8'));
  } catch (e) {
    throw new JobsError(`cannot parse ${jobsPath}: ${String(e)}`);
  }
  if (typeof raw !== 'object' || raw === null || !Array.isArray((raw as any).jobs)) {
    throw new JobsError(`${jobsPath}: expected an object with a "jobs" array`);
  }
  const base = path.dirname(path.resolve(jobsPath));
  const doc = raw as Record<string, any>;
  const jobs: ExtractionJob[] = doc.jobs.map((entry: Record<string, unknown>, i: number) => {
    const where = `${jobsPath} job[${i}]`;
    const direction = requireString(entry, 'direction', where);
    if (direction !== 'ego2exo' && direction !== 'exo2ego') {
      throw new JobsError(`${where}: direction must be ego2exo or exo2ego`);
    }
    const resolve = (p: string) => (path.isAbsolute(p) ? p : path.join(base, p));
    return {
      sourceImage: resolve(requireString(entry, 'sourceImage', where)),
      destImage: resolve(requireString(entry, 'destImage', where)),
      direction,
      sourceMask: resolve(requireString(entry, 'sourceMask', where)),
      output: requireString(entry, 'output', where),
      gtMask: typeof entry.gtMask === 'string' ? resolve(entry.gtMask) : undefined,
    };
  });
  return {
    backbone: doc.backbone ?? { kind: 'color-grid' },
    proposals: doc.proposals ?? {},
    jobs,
  };
}
