/**
 * unir-bridge extract --candidates c.jsonl --out emb.unir
 *     [--queries q.jsonl] [--queries-out q.unir] [--mode score|feature]
 *     [--model hash-mini|xenova:<id>] [--dim N]
 *     [--prefix-instructions per-search|extract]
 *
 * Exit codes: 0 success, 1 usage, 2 data error, 3 internal.
 */

import { parseArgs } from "node:util";

import { CorpusError, parseCandidates, parseQueries } from "./corpus.js";
import { ModelLoadError, loadEncoder } from "./encoders.js";
import { extractCandidates, extractQueries, writeEmbeddingFile } from "./extract.js";

async function run(argv: string[]): Promise<number> {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      candidates: { type: "string" },
      queries: { type: "string" },
      out: { type: "string" },
      "queries-out": { type: "string" },
      mode: { type: "string", default: "score" },
      model: { type: "string", default: "hash-mini" },
      dim: { type: "string", default: "256" },
      "prefix-instructions": { type: "string", default: "per-search" },
    },
  });
  if (positionals[0] !== "extract" || !values.candidates || !values.out) {
    console.error("usage: unir-bridge extract --candidates FILE --out FILE [options]");
    return 1;
  }
  const mode = values.mode === "feature" ? "feature" : "score";
  const prefix = values["prefix-instructions"] === "extract" ? "extract" : "per-search";
  const dim = Number(values.dim);
  if (!Number.isInteger(dim) || dim < 1) {
    console.error("error[USAGE]: --dim must be a positive integer");
    return 1;
  }

  const candidates = parseCandidates(values.candidates);
  const queries = values.queries ? parseQueries(values.queries, candidates) : [];
  const encoder = await loadEncoder(values.model!, dim);

  const store = await extractCandidates(candidates, encoder, {
    mode,
    prefixInstructions: prefix,
  });
  writeEmbeddingFile(store, values.out);
  let queriesOut: string | null = null;
  if (values["queries-out"]) {
    if (!values.queries) {
      console.error("error[USAGE]: --queries-out requires --queries");
      return 1;
    }
    const queryStore = await extractQueries(queries, encoder, {
      mode,
      prefixInstructions: prefix,
    });
    writeEmbeddingFile(queryStore, values["queries-out"]);
    queriesOut = values["queries-out"];
  }
  console.log(
    JSON.stringify({
      out: values.out,
      queries_out: queriesOut,
      rows: candidates.length,
      dim,
      mode,
      model: encoder.name,
    })
  );
  return 0;
}

run(process.argv.slice(2))
  .then((code) => process.exit(code))
  .catch((err) => {
    if (err instanceof CorpusError) {
      console.error(err.message);
      process.exit(2);
    }
    if (err instanceof ModelLoadError) {
      console.error(`error[${err.code}]: ${err.message}`);
      process.exit(2);
    }
    console.error(`error[INTERNAL]: ${String(err)}`);
    process.exit(3);
  });
