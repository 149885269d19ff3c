#!/usr/bin/env node
/**
 * boltzgrad-figs --spec <file.json> [--out <path>]
 *
 * Renders one figure from a spec file; the output path in the spec can
 * be overridden with --out. Exit codes: 0 ok, 2 schema mismatch or
 * missing columns, 1 other error.
 */
import { readFileSync, writeFileSync } from "fs";

import { render } from "./render.js";
import { MissingColumns, SchemaMismatch, parseFigureSpec } from "./schema.js";

export function main(argv: string[]): number {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      console.error("usage: boltzgrad-figs --spec <file.json> [--out <path>]");
      return 1;
    }
    args.set(argv[i].slice(2), argv[i + 1]);
  }
  const specPath = args.get("spec");
  if (!specPath) {
    console.error("usage: boltzgrad-figs --spec <file.json> [--out <path>]");
    return 1;
  }
  try {
    const spec = parseFigureSpec(readFileSync(specPath, "utf-8"));
    const svg = render(spec);
    const out = args.get("out") ?? spec.output;
    writeFileSync(out, svg);
    console.log(`wrote ${out}`);
    return 0;
  } catch (e) {
    if (e instanceof SchemaMismatch || e instanceof MissingColumns) {
      console.error(`schema error: ${(e as Error).message}`);
      return 2;
    }
    console.error(`error: ${(e as Error).message}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
