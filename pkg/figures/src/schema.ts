/**
 * Figure specification and the CSV row schemas it binds to.
 *
 * Each figure kind consumes exactly one CSV schema, matching the data
 * files the simulation runner emits. Validation failures raise
 * SchemaMismatch (unknown/invalid spec or rows) or MissingColumns
 * (header mismatch), both mapped to a nonzero exit by the CLI.
 */
import { z } from "zod";

export class SchemaMismatch extends Error {}
export class MissingColumns extends Error {}

export const FIGURE_KINDS = [
  "entropy-trace",
  "badset-scaling",
  "chaos-vs-N",
  "marginal-compare",
  "series-convergence",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export const figureSpecSchema = z
  .object({
    kind: z.enum(FIGURE_KINDS),
    input: z.string(),
    output: z.string(),
    style: z
      .object({
        width: z.number().int().positive().default(640),
        height: z.number().int().positive().default(420),
        title: z.string().default(""),
      })
      .strict()
      .default({}),
  })
  .strict();

export type FigureSpec = z.infer<typeof figureSpecSchema>;

export function parseFigureSpec(text: string): FigureSpec {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch (e) {
    throw new SchemaMismatch(`spec is not valid JSON: ${(e as Error).message}`);
  }
  const res = figureSpecSchema.safeParse(obj);
  if (!res.success) {
    throw new SchemaMismatch(`invalid figure spec: ${res.error.message}`);
  }
  return res.data;
}

const num = z.number().finite();

export const rowSchemas = {
  "entropy-trace": z.object({
    branch: z.string(),
    time: num,
    mass: num,
    energy: num,
    entropy: num,
    D: num,
    D_err: num,
  }),
  "badset-scaling": z.object({
    eps0: num.positive(),
    sign: z.string(),
    n: num,
    R: num,
    T: num,
    fraction: num,
    stderr: num,
    samples: num,
  }),
  "chaos-vs-N": z.object({
    time: z.string(),
    N: num,
    eps: num,
    cell_a: num,
    cell_b: num,
    defect: num,
    stderr: num,
  }),
  "marginal-compare": z.object({
    v1: num,
    v2: num,
    empirical: num,
    stderr: num,
    free_transport: num,
    boltzmann: num,
    z_free: num,
    z_boltzmann: num,
    z_vs_f0: num,
  }),
  "series-convergence": z.object({
    n: num,
    s: num,
    t: num,
    variant: z.string(),
    estimate: num,
    stderr: num,
    recollision_fraction: num,
    reference: num,
    samples: num,
  }),
} as const;

export type RowOf<K extends FigureKind> = z.infer<(typeof rowSchemas)[K]>;
