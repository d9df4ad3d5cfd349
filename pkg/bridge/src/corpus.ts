/**
 * Line-delimited corpus parsing with the same validation rules the engine
 * applies: unique ids, payload presence matching the declared modality,
 * non-empty positives, and every reference resolvable against the pool.
 */

import { readFileSync } from "node:fs";

export type Modality = "text" | "image" | "image,text";

export interface Candidate {
  did: string;
  modality: Modality;
  domain: string;
  txt: string | null;
  img: string | null;
}

export interface QueryInstruction {
  text: string;
  intent: string;
  domain: string;
}

export interface QueryInstance {
  qid: string;
  task: number;
  dataset: string;
  modality: Modality;
  txt: string | null;
  img: string | null;
  instructions: QueryInstruction[];
  pos: string[];
  neg: string[];
}

export class CorpusError extends Error {
  constructor(public code: string, message: string) {
    super(`error[${code}]: ${message}`);
  }
}

const TASK_QUERY_MODALITY: Record<number, Modality> = {
  1: "text", 2: "text", 3: "text",
  4: "image", 5: "image",
  6: "image,text", 7: "image,text", 8: "image,text",
};

export function hasText(modality: Modality): boolean {
  return modality === "text" || modality === "image,text";
}

export function hasImage(modality: Modality): boolean {
  return modality === "image" || modality === "image,text";
}

function parseModality(value: unknown, where: string): Modality {
  if (value === "text" || value === "image" || value === "image,text") return value;
  throw new CorpusError("MALFORMED_RECORD", `${where}: unknown modality ${String(value)}`);
}

function* jsonLines(path: string): Generator<[number, Record<string, unknown>]> {
  const content = readFileSync(path, "utf-8");
  let lineno = 0;
  for (const line of content.split("\n")) {
    lineno += 1;
    const trimmed = line.trim();
    if (!trimmed) continue;
    let record: unknown;
    try {
      record = JSON.parse(trimmed);
    } catch (err) {
      throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: invalid JSON`);
    }
    if (typeof record !== "object" || record === null || Array.isArray(record)) {
      throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: record is not an object`);
    }
    yield [lineno, record as Record<string, unknown>];
  }
}

function checkPayload(
  ident: string,
  modality: Modality,
  txt: string | null,
  img: string | null
): void {
  if (hasText(modality) !== Boolean(txt)) {
    throw new CorpusError("MODALITY_MISMATCH", `${ident}: modality ${modality} vs txt=${txt}`);
  }
  if (hasImage(modality) !== Boolean(img)) {
    throw new CorpusError("MODALITY_MISMATCH", `${ident}: modality ${modality} vs img=${img}`);
  }
}

export function parseCandidates(path: string): Candidate[] {
  const seen = new Set<string>();
  const out: Candidate[] = [];
  for (const [lineno, rec] of jsonLines(path)) {
    const did = String(rec.did ?? "");
    if (!did) throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: missing did`);
    if (seen.has(did)) throw new CorpusError("DUPLICATE_ID", did);
    seen.add(did);
    const modality = parseModality(rec.modality, `${path}:${lineno}`);
    const txt = (rec.txt as string | null) || null;
    const img = (rec.img as string | null) || null;
    checkPayload(did, modality, txt, img);
    const domain = String(rec.domain ?? "");
    if (!domain || domain !== domain.toLowerCase()) {
      throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: bad domain ${domain}`);
    }
    out.push({ did, modality, domain, txt, img });
  }
  return out;
}

export function parseQueries(path: string, pool: Candidate[]): QueryInstance[] {
  const poolIds = new Set(pool.map((c) => c.did));
  const seen = new Set<string>();
  const out: QueryInstance[] = [];
  for (const [lineno, rec] of jsonLines(path)) {
    const qid = String(rec.qid ?? "");
    if (!qid) throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: missing qid`);
    if (seen.has(qid)) throw new CorpusError("DUPLICATE_ID", qid);
    seen.add(qid);
    const task = Number(rec.task);
    if (!(task in TASK_QUERY_MODALITY)) {
      throw new CorpusError("MALFORMED_RECORD", `${path}:${lineno}: task ${rec.task}`);
    }
    const modality = parseModality(rec.modality, `${path}:${lineno}`);
    if (modality !== TASK_QUERY_MODALITY[task]) {
      throw new CorpusError(
        "MODALITY_MISMATCH",
        `${qid}: query modality ${modality} does not match task ${task}`
      );
    }
    const txt = (rec.txt as string | null) || null;
    const img = (rec.img as string | null) || null;
    checkPayload(qid, modality, txt, img);
    const instructions = (rec.instructions as QueryInstruction[] | undefined) ?? [];
    if (!Array.isArray(instructions) || instructions.length === 0) {
      throw new CorpusError("MALFORMED_RECORD", `${qid}: needs at least one instruction`);
    }
    const pos = (rec.pos as string[] | undefined) ?? [];
    if (!Array.isArray(pos) || pos.length === 0) {
      throw new CorpusError("MALFORMED_RECORD", `${qid}: needs at least one positive`);
    }
    const neg = (rec.neg as string[] | undefined) ?? [];
    for (const did of [...pos, ...neg]) {
      if (!poolIds.has(did)) throw new CorpusError("DANGLING_REF", `${qid} -> ${did}`);
    }
    out.push({ qid, task, dataset: String(rec.dataset ?? ""), modality, txt, img, instructions, pos, neg });
  }
  return out;
}
