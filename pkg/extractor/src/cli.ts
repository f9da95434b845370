#!/usr/bin/env node
/**
 * maskmatch-extract: turn image pairs into `.ommp` feature packs.
 *
 *   maskmatch-extract extract --pairs jobs.json --out dir/
 *       [--max-candidates N] [--deterministic] [--workers N]
 *
 * Exit codes: 0 success, 1 usage error, 2 data/model error.
 */

import { runJobs } from './extract.js';
import { JobsError, parseJobsFile } from './jobs.js';

const USAGE =
  'usage: maskmatch-extract extract --pairs jobs.json --out dir/ ' +
  '[--max-candidates N] [--deterministic] [--workers N]';

interface CliArgs {
  pairs: string;
  out: string;
  maxCandidates: number;
  deterministic: boolean;
  workers: number;
}

class UsageError extends Error {}

function parseArgs(argv: string[]): CliArgs {
  if (argv[0] !== 'extract') {
    throw new UsageError(`expected the "extract" subcommand\n${USAGE}`);
  }
  const args: Partial<CliArgs> = { maxCandidates: 32, deterministic: false, workers: 1 };
  for (let i = 1; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      if (i + 1 >= argv.length) throw new UsageError(`${flag} needs a value\n${USAGE}`);
      return argv[++i];
    };
    switch (flag) {
      case '--pairs':
        args.pairs = next();
        break;
      case '--out':
        args.out = next();
        break;
      case '--max-candidates':
        args.maxCandidates = Number(next());
        break;
      case '--deterministic':
        args.deterministic = true;
        break;
      case '--workers':
        args.workers = Number(next());
        break;
      case '--help':
      case '-h':
        console.log(USAGE);
        process.exit(0);
        break;
      default:
        throw new UsageError(`unknown flag ${flag}\n${USAGE}`);
    }
  }
  if (!args.pairs || !args.out) {
    throw new UsageError(`--pairs and --out are required\n${USAGE}`);
  }
  if (!Number.isFinite(args.maxCandidates) || args.maxCandidates! < 0) {
    throw new UsageError('--max-candidates must be a non-negative number');
  }
  return args as CliArgs;
}

export async function main(argv: string[]): Promise<number> {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (e) {
    if (e instanceof UsageError) {
      console.error(`error: ${e.message}`);
      return 1;
    }
    throw e;
  }
  try {
    const jobsFile = parseJobsFile(args.pairs);
    const results = await runJobs(jobsFile, {
      outDir: args.out,
      maxCandidates: args.maxCandidates,
      deterministic: args.deterministic,
      workers: args.workers,
    });
    for (const r of results) {
      console.log(`${r.packPath}: ${r.candidates} candidates`);
    }
    return 0;
  } catch (e) {
    if (e instanceof JobsError || e instanceof Error) {
      console.error(`error: ${e.message}`);
      return 2;
    }
    throw e;
  }
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('cli.js') || entry.endsWith('maskmatch-extract')) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (e) => {
      console.error(e);
      process.exit(3);
    },
  );
}
