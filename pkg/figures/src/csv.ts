import { readFileSync } from "fs";
import Papa from "papaparse";
import { z } from "zod";

import { FigureKind, MissingColumns, RowOf, SchemaMismatch, rowSchemas } from "./schema.js";

/** Load a CSV and validate every row against the figure kind's schema. */
export function loadRows<K extends FigureKind>(kind: K, path: string): RowOf<K>[] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (e) {
    throw new SchemaMismatch(`cannot read ${path}: ${(e as Error).message}`);
  }
  const parsed = Papa.parse<Record<string, unknown>>(text.trim(), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaMismatch(`malformed CSV ${path}: ${parsed.errors[0].message}`);
  }
  const schema = rowSchemas[kind];
  const wanted = Object.keys((schema as z.AnyZodObject).shape);
  const have = parsed.meta.fields ?? [];
  const missing = wanted.filter((c) => !have.includes(c));
  if (missing.length > 0) {
    throw new MissingColumns(`${path} lacks columns: ${missing.join(", ")}`);
  }
  return parsed.data.map((row, i) => {
    const res = schema.safeParse(row);
    if (!res.success) {
      throw new SchemaMismatch(`${path} row ${i + 2}: ${res.error.issues[0].message}`);
    }
    return res.data as RowOf<K>;
  });
}
