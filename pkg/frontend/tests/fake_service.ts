/**
 * In-memory stand-in for the conduct service, faithful to the documented
 * wire contract (paths, payload shapes, status codes, error code field).
 * Values it serves are arbitrary fixtures: the console must render them
 * verbatim, so tests can assert pass-through behavior.
 */

import type { FetchLike, PolicyMeta, Recommendation, SessionView, StateCounts } from "../src/api.js";

export interface FakeTrialScript {
  /** Recommendation to serve at each block index (null = off schedule). */
  recommendations: (Recommendation | null)[];
  values: number[];
  whatIf: { candidate_value: number; recommended_value: number };
}

const DEFAULT_POLICY: PolicyMeta = {
  id: "n20",
  format_version: 1,
  n_patients: 20,
  failure_weight: 4.0,
  block_cost: 0.01,
  allocation_set: [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
  min_block: 3,
  block_increment: 2,
  smoothing: [1, 1, 1, 1],
  entry_count: 2113,
  start_value: 1.42,
};

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class FakeService {
  readonly policies: PolicyMeta[];
  private sessions = new Map<string, SessionView>();
  private nextId = 1;
  readonly requests: { method: string; path: string }[] = [];

  constructor(
    policies: PolicyMeta[] = [DEFAULT_POLICY],
    private readonly script: FakeTrialScript = {
      recommendations: [
        { block_size: 4, allocation: 0.5, assigned_A: 2, assigned_B: 2 },
        { block_size: 6, allocation: 0.7, assigned_A: 4, assigned_B: 2 },
        { block_size: 10, allocation: 0.6, assigned_A: 6, assigned_B: 4 },
      ],
      values: [1.42, 1.1, 0.73],
      whatIf: { candidate_value: 1.17, recommended_value: 1.42 },
    },
  ) {
    this.policies = policies;
  }

  get fetch(): FetchLike {
    return async (url, init) => this.handle(url, init);
  }

  private view(session: SessionView): SessionView {
    const blocks = session.block_log.length;
    const total = session.current_state.n_assigned_A + session.current_state.n_assigned_B;
    const complete = total >= session.n_patients;
    return {
      ...session,
      status: complete ? "complete" : "active",
      recommendation: complete ? null : this.script.recommendations[blocks] ?? null,
      value: complete ? 0 : this.script.values[blocks] ?? null,
      note: !complete && !this.script.recommendations[blocks] ? "no recommendation: off schedule; nearest on-schedule totals: [4, 6]" : null,
    };
  }

  private handle(url: string, init?: RequestInit): Response {
    const method = (init?.method ?? "GET").toUpperCase();
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    this.requests.push({ method, path });

    if (method === "GET" && path === "/policies") return json(200, this.policies);
    let match = path.match(/^\/policies\/([^/]+)$/);
    if (method === "GET" && match) {
      const policy = this.policies.find((p) => p.id === decodeURIComponent(match![1]!));
      return policy ? json(200, policy) : json(404, { code: "unknown-policy", message: "no such policy" });
    }
    if (method === "GET" && path === "/trials") {
      return json(200, [...this.sessions.values()].map((s) => ({
        session_id: s.session_id,
        policy_id: s.policy_id,
        status: this.view(s).status,
        observed: s.current_state.n_assigned_A + s.current_state.n_assigned_B,
        n_patients: s.n_patients,
        created_at: s.created_at,
      })));
    }
    if (method === "POST" && path === "/trials") {
      const body = JSON.parse(String(init?.body ?? "{}"));
      const policy = this.policies.find((p) => p.id === body.policy_id);
      if (!policy) return json(404, { code: "unknown-policy", message: "no such policy" });
      const session: SessionView = {
        session_id: `fake-${this.nextId++}`,
        policy_id: policy.id,
        n_patients: policy.n_patients,
        status: "active",
        created_at: new Date().toISOString(),
        current_state: { n_assigned_A: 0, n_success_A: 0, n_assigned_B: 0, n_success_B: 0 },
        block_log: [],
        recommendation: null,
        value: null,
        note: null,
      };
      this.sessions.set(session.session_id, session);
      return json(201, this.view(session));
    }
    match = path.match(/^\/trials\/([^/]+)$/);
    if (method === "GET" && match) {
      const session = this.sessions.get(decodeURIComponent(match[1]!));
      return session ? json(200, this.view(session)) : json(404, { code: "unknown-session", message: "no such session" });
    }
    match = path.match(/^\/trials\/([^/]+)\/blocks$/);
    if (method === "POST" && match) {
      const session = this.sessions.get(decodeURIComponent(match[1]!));
      if (!session) return json(404, { code: "unknown-session", message: "no such session" });
      const view = this.view(session);
      if (view.status === "complete") return json(409, { code: "session-complete", message: "trial already complete" });
      const body = JSON.parse(String(init?.body ?? "{}"));
      const counts = [body.successes_A, body.failures_A, body.successes_B, body.failures_B];
      if (counts.some((c) => !Number.isInteger(c) || c < 0)) {
        return json(422, { code: "invalid-request", message: "counts must be nonnegative integers" });
      }
      const armA = body.successes_A + body.failures_A;
      const armB = body.successes_B + body.failures_B;
      const rec = view.recommendation;
      if ((body.enforce ?? "strict") === "strict" && rec && (armA !== rec.assigned_A || armB !== rec.assigned_B)) {
        return json(409, {
          code: "strict-mismatch",
          message: `recommended arm split is ${rec.assigned_A}/${rec.assigned_B}, entered ${armA}/${armB}`,
        });
      }
      const stratum: StateCounts = {
        n_assigned_A: armA,
        n_success_A: body.successes_A,
        n_assigned_B: armB,
        n_success_B: body.successes_B,
      };
      session.block_log.push({
        action: rec ? { block_size: rec.block_size, allocation: rec.allocation } : null,
        stratum,
        timestamp: new Date().toISOString(),
      });
      session.current_state = {
        n_assigned_A: session.current_state.n_assigned_A + armA,
        n_success_A: session.current_state.n_success_A + body.successes_A,
        n_assigned_B: session.current_state.n_assigned_B + armB,
        n_success_B: session.current_state.n_success_B + body.successes_B,
      };
      return json(200, this.view(session));
    }
    match = path.match(/^\/trials\/([^/]+)\/whatif\?(.*)$/);
    if (method === "GET" && match) {
      const session = this.sessions.get(decodeURIComponent(match[1]!));
      if (!session) return json(404, { code: "unknown-session", message: "no such session" });
      const params = new URLSearchParams(match[2]!);
      const size = Number(params.get("block_size"));
      if (size < 3) return json(422, { code: "infeasible", message: "block size below the minimum" });
      return json(200, this.script.whatIf);
    }
    return json(404, { code: "unknown-route", message: `${method} ${path}` });
  }
}
