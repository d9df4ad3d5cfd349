/**
 * Extraction pipeline: corpus in, engine-format embedding file out.
 *
 * Ids are written in candidates-file order. A candidate missing a modality
 * gets the all-zero placeholder row, so its presence bit is off, matching
 * the engine's padding semantics.
 */

import { writeFileSync } from "node:fs";

import { Candidate, QueryInstance, hasImage, hasText } from "./corpus.js";
import { Encoder } from "./encoders.js";
import { EmbeddingFile, ScoreStore, encodeEmbeddingFile } from "./format.js";

export interface ExtractConfig {
  mode: "score" | "feature";
  prefixInstructions: "per-search" | "extract";
}

export async function extractCandidates(
  candidates: Candidate[],
  encoder: Encoder,
  config: ExtractConfig
): Promise<EmbeddingFile> {
  const dim = encoder.dim;
  const count = candidates.length;
  if (config.mode === "score") {
    const image = new Float32Array(count * dim);
    const text = new Float32Array(count * dim);
    for (let i = 0; i < count; i++) {
      const cand = candidates[i];
      if (hasText(cand.modality) && cand.txt) {
        text.set(await encoder.encodeText(cand.txt), i * dim);
      }
      if (hasImage(cand.modality) && cand.img) {
        image.set(await encoder.encodeImage(cand.img), i * dim);
      }
    }
    const store: ScoreStore = { mode: "score", dim, ids: candidates.map((c) => c.did), image, text };
    return store;
  }
  const feature = new Float32Array(count * dim);
  for (let i = 0; i < count; i++) {
    const cand = candidates[i];
    const acc = new Float32Array(dim);
    let parts = 0;
    if (hasText(cand.modality) && cand.txt) {
      const vec = await encoder.encodeText(cand.txt);
      for (let d = 0; d < dim; d++) acc[d] += vec[d];
      parts += 1;
    }
    if (hasImage(cand.modality) && cand.img) {
      const vec = await encoder.encodeImage(cand.img);
      for (let d = 0; d < dim; d++) acc[d] += vec[d];
      parts += 1;
    }
    if (parts > 0) {
      let norm = 0;
      for (const v of acc) norm += v * v;
      norm = Math.sqrt(norm);
      if (norm > 0) for (let d = 0; d < dim; d++) acc[d] /= norm;
    }
    feature.set(acc, i * dim);
  }
  return { mode: "feature", dim, ids: candidates.map((c) => c.did), feature };
}

export async function extractQueries(
  queries: QueryInstance[],
  encoder: Encoder,
  config: ExtractConfig
): Promise<EmbeddingFile> {
  const dim = encoder.dim;
  const count = queries.length;
  const image = new Float32Array(count * dim);
  const text = new Float32Array(count * dim);
  for (let i = 0; i < count; i++) {
    const q = queries[i];
    let textInput = q.txt ?? "";
    if (config.prefixInstructions === "extract" && q.instructions.length > 0) {
      textInput = `${q.instructions[0].text} ${textInput}`.trim();
    }
    if (textInput) {
      text.set(await encoder.encodeText(textInput), i * dim);
    }
    if (q.img) {
      image.set(await encoder.encodeImage(q.img), i * dim);
    }
  }
  return { mode: "score", dim, ids: queries.map((q) => q.qid), image, text };
}

export function writeEmbeddingFile(store: EmbeddingFile, path: string): void {
  writeFileSync(path, encodeEmbeddingFile(store));
}
