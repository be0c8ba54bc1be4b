/**
 * Typed client for the trial-conduct HTTP API.
 *
 * The console performs no trial mathematics: every number it renders comes
 * from these responses (or is an integer sum of response counts), so the
 * types here are the full vocabulary of the UI.
 */

export interface StateCounts {
  n_assigned_A: number;
  n_success_A: number;
  n_assigned_B: number;
  n_success_B: number;
}

export interface Recommendation {
  block_size: number;
  allocation: number;
  assigned_A: number;
  assigned_B: number;
}

export interface BlockLogEntry {
  action: { block_size: number; allocation: number } | null;
  stratum: StateCounts;
  timestamp: string;
}

export interface SessionView {
  session_id: string;
  policy_id: string;
  n_patients: number;
  status: "active" | "complete";
  created_at: string;
  current_state: StateCounts;
  block_log: BlockLogEntry[];
  recommendation: Recommendation | null;
  value: number | null;
  note: string | null;
}

export interface SessionSummary {
  session_id: string;
  policy_id: string;
  status: string;
  observed: number;
  n_patients: number;
  created_at: string;
}

export interface PolicyMeta {
  id: string;
  format_version: number;
  n_patients: number;
  failure_weight: number;
  block_cost: number;
  allocation_set: number[];
  min_block: number;
  block_increment: number;
  smoothing: number[];
  entry_count: number;
  start_value: number;
}

export interface BlockEntryRequest {
  successes_A: number;
  failures_A: number;
  successes_B: number;
  failures_B: number;
  enforce: "strict" | "free";
}

export interface WhatIfResult {
  candidate_value: number;
  recommended_value: number;
}

/** Error with the service's machine-readable code attached. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ServiceError> {
  let code = "unknown";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body.code === "string") code = body.code;
    if (body && typeof body.message === "string") message = body.message;
  } catch {
    // non-JSON error body: keep the status line
  }
  return new ServiceError(response.status, code, message);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  listPolicies(): Promise<PolicyMeta[]> {
    return this.request("/policies");
  }

  getPolicy(policyId: string): Promise<PolicyMeta> {
    return this.request(`/policies/${encodeURIComponent(policyId)}`);
  }

  listTrials(): Promise<SessionSummary[]> {
    return this.request("/trials");
  }

  createTrial(policyId: string): Promise<SessionView> {
    return this.request("/trials", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ policy_id: policyId }),
    });
  }

  getTrial(sessionId: string): Promise<SessionView> {
    return this.request(`/trials/${encodeURIComponent(sessionId)}`);
  }

  postBlock(sessionId: string, entry: BlockEntryRequest): Promise<SessionView> {
    return this.request(`/trials/${encodeURIComponent(sessionId)}/blocks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(entry),
    });
  }

  whatIf(sessionId: string, blockSize: number, allocation: number): Promise<WhatIfResult> {
    const params = new URLSearchParams({
      block_size: String(blockSize),
      allocation: String(allocation),
    });
    return this.request(`/trials/${encodeURIComponent(sessionId)}/whatif?${params}`);
  }
}
