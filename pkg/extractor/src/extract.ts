/** Runs extraction jobs: images in, validated feature packs out. */

import { mkdirSync, writeFileSync } from 'fs';
import path from 'path';

import { createBackbone, type Backbone } from './backbone.js';
import { loadMaskPng, loadPng } from './image.js';
import type { ExtractionJob, JobsFile } from './jobs.js';
import { maskArea, serializePack, type BinaryMask, type PackData } from './pack.js';
import { proposeMasks, type ProposalConfig } from './proposals.js';

export interface ExtractOptions {
  outDir: string;
  maxCandidates: number;
  deterministic: boolean;
  workers: number;
  log?: (line: string) => void;
}

export interface ExtractResult {
  packPath: string;
  candidates: number;
}

function intersectionOverUnion(a: BinaryMask, b: BinaryMask): number {
  let inter = 0;
  let union = 0;
  for (let i = 0; i < a.data.length; i++) {
    const fa = a.data[i] !== 0;
    const fb = b.data[i] !== 0;
    if (fa && fb) inter++;
    if (fa || fb) union++;
  }
  return union === 0 ? 1 : inter / union;
}

export async function runJob(
  job: ExtractionJob,
  backbone: Backbone,
  proposalConfig: ProposalConfig,
  options: ExtractOptions,
): Promise<ExtractResult> {
  const log = options.log ?? ((line) => console.error(line));
  const sourceImage = loadPng(job.sourceImage);
  const destImage = loadPng(job.destImage);
  const sourceMask = loadMaskPng(job.sourceMask);
  if (sourceMask.height !== sourceImage.height || sourceMask.width !== sourceImage.width) {
    throw new Error(
      `${job.sourceMask}: mask is ${sourceMask.height}x${sourceMask.width} but ` +
        `${job.sourceImage} is ${sourceImage.height}x${sourceImage.width}`,
    );
  }
  if (maskArea(sourceMask) === 0) {
    throw new Error(`${job.sourceMask}: source mask has no foreground`);
  }

  const sourceFeatures = await backbone.extract(sourceImage);
  const destFeatures = await backbone.extract(destImage);
  const proposals = proposeMasks(destImage, options.maxCandidates, proposalConfig);
  if (proposals.length === 0) {
    log(`warning: ${job.destImage} produced zero proposals; writing an empty-candidate pack`);
  }

  let gtIndex: number | undefined;
  let gtMask: BinaryMask | undefined;
  if (job.gtMask !== undefined && proposals.length > 0) {
    gtMask = loadMaskPng(job.gtMask);
    let bestIoU = -1;
    proposals.forEach((proposal, i) => {
      const iou = intersectionOverUnion(proposal.mask, gtMask!);
      if (iou > bestIoU) {
        bestIoU = iou;
        gtIndex = i;
      }
    });
  }

  const pack: PackData = {
    direction: job.direction,
    sourceFeatures,
    destFeatures,
    sourceMask,
    candidates: proposals.map((p) => p.mask),
    visible: true,
    gtIndex,
    gtMask: gtIndex !== undefined ? gtMask : undefined,
  };
  const packPath = path.isAbsolute(job.output)
    ? job.output
    : path.join(options.outDir, job.output);
  mkdirSync(path.dirname(packPath), { recursive: true });
  writeFileSync(packPath, serializePack(pack));
  return { packPath, candidates: proposals.length };
}

export async function runJobs(jobsFile: JobsFile, options: ExtractOptions): Promise<ExtractResult[]> {
  const backbone = await createBackbone(jobsFile.backbone);
  const results: ExtractResult[] = [];
  const workers = Math.max(1, options.workers);
  for (let start = 0; start < jobsFile.jobs.length; start += workers) {
    const chunk = jobsFile.jobs.slice(start, start + workers);
    const done = await Promise.all(
      chunk.map((job) => runJob(job, backbone, jobsFile.proposals, options)),
    );
    results.push(...done);
  }
  return results;
}
