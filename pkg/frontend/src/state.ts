/**
 * Pure view-model helpers. The only arithmetic allowed here is integer
 * bookkeeping over service-supplied counts (sums, schedule totals); values
 * like utilities, estimates, and recommendations are always pass-through.
 */

import type { BlockLogEntry, PolicyMeta, Recommendation, StateCounts, WhatIfResult } from "./api.js";

export interface BlockFormInput {
  successes_A: string;
  failures_A: string;
  successes_B: string;
  failures_B: string;
}

export interface ParsedBlockEntry {
  successes_A: number;
  failures_A: number;
  successes_B: number;
  failures_B: number;
}

/** Client-side validation: each field must be a nonnegative integer. */
export function parseBlockForm(input: BlockFormInput): { entry?: ParsedBlockEntry; errors: string[] } {
  const errors: string[] = [];
  const out: Record<string, number> = {};
  for (const [field, raw] of Object.entries(input)) {
    const trimmed = raw.trim();
    const value = Number(trimmed);
    if (trimmed === "" || !Number.isInteger(value) || value < 0) {
      errors.push(`${field} must be a nonnegative integer`);
    } else {
      out[field] = value;
    }
  }
  if (errors.length > 0) return { errors };
  return { entry: out as unknown as ParsedBlockEntry, errors: [] };
}

export function emptyCounts(): StateCounts {
  return { n_assigned_A: 0, n_success_A: 0, n_assigned_B: 0, n_success_B: 0 };
}

/** Componentwise sum of the logged strata (used to cross-check the view). */
export function sumStrata(blockLog: BlockLogEntry[]): StateCounts {
  const total = emptyCounts();
  for (const entry of blockLog) {
    total.n_assigned_A += entry.stratum.n_assigned_A;
    total.n_success_A += entry.stratum.n_success_A;
    total.n_assigned_B += entry.stratum.n_assigned_B;
    total.n_success_B += entry.stratum.n_success_B;
  }
  return total;
}

export function countsEqual(a: StateCounts, b: StateCounts): boolean {
  return (
    a.n_assigned_A === b.n_assigned_A &&
    a.n_success_A === b.n_success_A &&
    a.n_assigned_B === b.n_assigned_B &&
    a.n_success_B === b.n_success_B
  );
}

export interface TracePoint {
  patients: number;
  fractionToA: number;
}

/** Cumulative share of patients on arm A after each logged block. */
export function allocationTrace(blockLog: BlockLogEntry[]): TracePoint[] {
  const points: TracePoint[] = [];
  let assignedA = 0;
  let assignedB = 0;
  for (const entry of blockLog) {
    assignedA += entry.stratum.n_assigned_A;
    assignedB += entry.stratum.n_assigned_B;
    const treated = assignedA + assignedB;
    points.push({ patients: treated, fractionToA: treated > 0 ? assignedA / treated : 0.5 });
  }
  return points;
}

/**
 * Cumulative totals the policy's schedule allows, from the policy header:
 * 0, N, and every multiple of the block increment within
 * [min_block, N - min_block].
 */
export function scheduleTotals(meta: PolicyMeta): number[] {
  const totals = new Set<number>([0, meta.n_patients]);
  for (let t = meta.min_block; t <= meta.n_patients - meta.min_block; t += 1) {
    if (t % meta.block_increment === 0) totals.add(t);
  }
  return [...totals].sort((a, b) => a - b);
}

/** Candidate what-if block sizes at a given cumulative total. */
export function allowedBlockSizes(meta: PolicyMeta, currentTotal: number): number[] {
  return scheduleTotals(meta)
    .filter((total) => total > currentTotal && total - currentTotal >= meta.min_block)
    .map((total) => total - currentTotal);
}

export interface WhatIfDisplay {
  candidate: number;
  recommended: number;
  tied: boolean;
}

/**
 * Values for the comparison card. The candidate is never displayed above the
 * recommended value (the service guarantees the ordering up to rounding).
 */
export function whatIfDisplay(result: WhatIfResult): WhatIfDisplay {
  const candidate = Math.min(result.candidate_value, result.recommended_value);
  return {
    candidate,
    recommended: result.recommended_value,
    tied: result.candidate_value >= result.recommended_value,
  };
}

export function describeRecommendation(rec: Recommendation): string {
  return (
    `next block: ${rec.block_size} patients, ` +
    `${rec.assigned_A} to arm A / ${rec.assigned_B} to arm B ` +
    `(allocation ${rec.allocation})`
  );
}

export function formatValue(value: number | null): string {
  return value === null ? "-" : value.toFixed(6);
}
