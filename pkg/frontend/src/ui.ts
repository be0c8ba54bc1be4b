/** DOM rendering for the conduct console. No framework, no client math. */

import type { ApiClient, PolicyMeta, SessionView } from "./api.js";
import { ServiceError } from "./api.js";
import {
  allocationTrace,
  allowedBlockSizes,
  countsEqual,
  describeRecommendation,
  formatValue,
  parseBlockForm,
  sumStrata,
  whatIfDisplay,
} from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

function banner(kind: "error" | "info", text: string): HTMLElement {
  return el("div", { class: `banner ${kind}` }, [text]);
}

export class ConductConsole {
  private policies: PolicyMeta[] = [];
  private selectedPolicy: string | null = null;
  private session: SessionView | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly onSessionChange: (sessionId: string | null) => void = () => {},
  ) {}

  async start(sessionId: string | null): Promise<void> {
    try {
      this.policies = await this.api.listPolicies();
    } catch (err) {
      this.renderFatal(`service unreachable: ${(err as Error).message}`);
      return;
    }
    if (this.policies.length === 1) this.selectedPolicy = this.policies[0]!.id;
    if (sessionId) {
      try {
        this.session = await this.api.getTrial(sessionId);
        this.selectedPolicy = this.session.policy_id;
      } catch (err) {
        this.session = null;
        this.render(banner("error", `session not restored: ${(err as Error).message}`));
        return;
      }
    }
    this.render();
  }

  private renderFatal(message: string): void {
    this.root.replaceChildren(
      banner("error", message),
      el("button", { id: "retry" }, ["retry"]),
    );
    this.root.querySelector("#retry")!.addEventListener("click", () => void this.start(null));
  }

  private async refresh(): Promise<void> {
    if (this.session) this.session = await this.api.getTrial(this.session.session_id);
    this.render();
  }

  private render(...extra: HTMLElement[]): void {
    this.root.replaceChildren(
      this.policyPicker(),
      ...(this.session ? [this.sessionPanel(), this.whatIfPanel(), this.tracePanel()] : []),
      ...extra,
    );
  }

  // -- policy selection -----------------------------------------------------

  private policyPicker(): HTMLElement {
    const box = el("section", { class: "card" }, [el("h2", {}, ["Policies"])]);
    if (this.policies.length === 0) {
      box.append(banner("info", "no policies loaded; add policy files to the service directory"));
      return box;
    }
    const table = el("table", {}, [
      el("tr", {}, ["", "id", "N", "failure weight", "block cost", "allocations"].map((h) => el("th", {}, [h]))),
    ]);
    for (const policy of this.policies) {
      const pick = el("input", { type: "radio", name: "policy", value: policy.id });
      if (policy.id === this.selectedPolicy) pick.setAttribute("checked", "checked");
      pick.addEventListener("change", () => {
        this.selectedPolicy = policy.id;
      });
      table.append(
        el("tr", {}, [
          el("td", {}, [pick]),
          el("td", {}, [policy.id]),
          el("td", {}, [String(policy.n_patients)]),
          el("td", {}, [String(policy.failure_weight)]),
          el("td", {}, [String(policy.block_cost)]),
          el("td", {}, [policy.allocation_set.join(", ")]),
        ]),
      );
    }
    const create = el("button", { id: "create-session" }, ["start a trial session"]);
    create.addEventListener("click", () => void this.createSession());
    box.append(table, create);
    return box;
  }

  private async createSession(): Promise<void> {
    if (!this.selectedPolicy) {
      this.render(banner("error", "select a policy first"));
      return;
    }
    try {
      this.session = await this.api.createTrial(this.selectedPolicy);
      this.onSessionChange(this.session.session_id);
      this.render();
    } catch (err) {
      this.render(banner("error", (err as Error).message));
    }
  }

  // -- session view and block entry ------------------------------------------

  private sessionPanel(): HTMLElement {
    const session = this.session!;
    const state = session.current_state;
    const consistent = countsEqual(state, sumStrata(session.block_log));
    const card = el("section", { class: "card", id: "session" }, [
      el("h2", {}, [`Session ${session.session_id.slice(0, 8)} (${session.status})`]),
      el("p", { id: "progress" }, [
        `${state.n_assigned_A + state.n_assigned_B} of ${session.n_patients} outcomes recorded`,
      ]),
      el("table", { id: "current-state" }, [
        el("tr", {}, [el("th", {}, [""]), el("th", {}, ["assigned"]), el("th", {}, ["successes"])]),
        el("tr", {}, [el("th", {}, ["arm A"]), el("td", {}, [String(state.n_assigned_A)]), el("td", {}, [String(state.n_success_A)])]),
        el("tr", {}, [el("th", {}, ["arm B"]), el("td", {}, [String(state.n_assigned_B)]), el("td", {}, [String(state.n_success_B)])]),
      ]),
    ]);
    if (!consistent) card.append(banner("error", "view inconsistent: block rows do not sum to the cumulative table"));

    if (session.block_log.length > 0) {
      const log = el("table", { id: "block-log" }, [
        el("tr", {}, ["block", "A (succ/assigned)", "B (succ/assigned)", "action"].map((h) => el("th", {}, [h]))),
      ]);
      session.block_log.forEach((entry, index) => {
        log.append(el("tr", {}, [
          el("td", {}, [String(index + 1)]),
          el("td", {}, [`${entry.stratum.n_success_A}/${entry.stratum.n_assigned_A}`]),
          el("td", {}, [`${entry.stratum.n_success_B}/${entry.stratum.n_assigned_B}`]),
          el("td", {}, [entry.action ? `T=${entry.action.block_size}, phi=${entry.action.allocation}` : "off-policy"]),
        ]));
      });
      card.append(log);
    }

    const rec = session.recommendation;
    if (rec) {
      card.append(
        el("p", { id: "recommendation" }, [describeRecommendation(rec)]),
        el("p", { id: "value" }, [`expected remaining utility: ${formatValue(session.value)}`]),
      );
    } else if (session.status === "complete") {
      card.append(banner("info", "trial complete; no further blocks"));
    } else if (session.note) {
      card.append(banner("info", session.note));
    }

    card.append(this.blockForm(session));
    return card;
  }

  private blockForm(session: SessionView): HTMLElement {
    const disabled = session.status === "complete";
    const form = el("form", { id: "block-form" });
    const fields = ["successes_A", "failures_A", "successes_B", "failures_B"] as const;
    for (const name of fields) {
      form.append(el("label", {}, [
        name.replace("_", " "),
        el("input", { name, type: "number", min: "0", step: "1", value: "0" }),
      ]));
    }
    const enforce = el("select", { name: "enforce" }, [
      el("option", { value: "strict" }, ["strict (match the recommendation)"]),
      el("option", { value: "free" }, ["free (accept any consistent block)"]),
    ]);
    const submit = el("button", { type: "submit" }, ["record block"]);
    if (disabled) submit.setAttribute("disabled", "disabled");
    const errors = el("div", { id: "block-errors" });
    form.append(el("label", {}, ["enforcement", enforce]), submit, errors);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitBlock(form, errors);
    });
    return form;
  }

  private async submitBlock(form: HTMLFormElement, errors: HTMLElement): Promise<void> {
    const data = new FormData(form);
    const parsed = parseBlockForm({
      successes_A: String(data.get("successes_A") ?? ""),
      failures_A: String(data.get("failures_A") ?? ""),
      successes_B: String(data.get("successes_B") ?? ""),
      failures_B: String(data.get("failures_B") ?? ""),
    });
    if (!parsed.entry) {
      errors.replaceChildren(...parsed.errors.map((text) => banner("error", text)));
      return;
    }
    try {
      this.session = await this.api.postBlock(this.session!.session_id, {
        ...parsed.entry,
        enforce: (data.get("enforce") as "strict" | "free") ?? "strict",
      });
      this.render();
    } catch (err) {
      if (err instanceof ServiceError) {
        errors.replaceChildren(banner("error", `${err.code}: ${err.message}`));
      } else {
        errors.replaceChildren(banner("error", (err as Error).message));
      }
    }
  }

  // -- what-if exploration ----------------------------------------------------

  private whatIfPanel(): HTMLElement {
    const session = this.session!;
    const card = el("section", { class: "card", id: "whatif" }, [el("h2", {}, ["What if?"])]);
    if (session.status === "complete" || !session.recommendation) {
      card.append(banner("info", "what-if exploration needs an active on-schedule session"));
      return card;
    }
    const meta = this.policies.find((p) => p.id === session.policy_id);
    if (!meta) return card;
    const state = session.current_state;
    const sizes = allowedBlockSizes(meta, state.n_assigned_A + state.n_assigned_B);
    const sizePick = el("select", { id: "whatif-size" },
      sizes.map((size) => el("option", { value: String(size) }, [String(size)])));
    const allocPick = el("select", { id: "whatif-alloc" },
      meta.allocation_set.map((phi) => el("option", { value: String(phi) }, [String(phi)])));
    const ask = el("button", { id: "whatif-run" }, ["compare with recommendation"]);
    const result = el("div", { id: "whatif-result" });
    ask.addEventListener("click", () => void this.runWhatIf(sizePick, allocPick, result));
    card.append(el("label", {}, ["block size", sizePick]), el("label", {}, ["allocation", allocPick]), ask, result);
    return card;
  }

  private async runWhatIf(
    sizePick: HTMLSelectElement, allocPick: HTMLSelectElement, result: HTMLElement,
  ): Promise<void> {
    try {
      const got = await this.api.whatIf(
        this.session!.session_id, Number(sizePick.value), Number(allocPick.value));
      const shown = whatIfDisplay(got);
      result.replaceChildren(
        el("p", {}, [`candidate: ${shown.candidate.toFixed(6)}`]),
        el("p", {}, [`recommended: ${shown.recommended.toFixed(6)}`]),
        el("p", {}, [shown.tied ? "the candidate matches the recommendation" : "the recommendation is better"]),
      );
    } catch (err) {
      if (err instanceof ServiceError && err.status === 422) {
        result.replaceChildren(banner("error", `infeasible at this state: ${err.message}`));
      } else {
        result.replaceChildren(banner("error", (err as Error).message));
      }
    }
  }

  // -- allocation trace --------------------------------------------------------

  private tracePanel(): HTMLElement {
    const card = el("section", { class: "card", id: "trace" }, [el("h2", {}, ["Allocation trace"])]);
    const points = allocationTrace(this.session!.block_log);
    if (points.length === 0) {
      card.append(banner("info", "no blocks recorded yet"));
      return card;
    }
    const width = 360;
    const height = 120;
    const n = this.session!.n_patients;
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
    svg.setAttribute("width", String(width));
    svg.setAttribute("height", String(height));
    const scaleX = (patients: number) => (patients / n) * (width - 20) + 10;
    const scaleY = (fraction: number) => height - 10 - fraction * (height - 20);
    const midline = document.createElementNS("http://www.w3.org/2000/svg", "line");
    midline.setAttribute("x1", "10");
    midline.setAttribute("x2", String(width - 10));
    midline.setAttribute("y1", String(scaleY(0.5)));
    midline.setAttribute("y2", String(scaleY(0.5)));
    midline.setAttribute("stroke", "#bbb");
    midline.setAttribute("stroke-dasharray", "4 4");
    const polyline = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    polyline.setAttribute("fill", "none");
    polyline.setAttribute("stroke", "#2266aa");
    polyline.setAttribute("stroke-width", "2");
    polyline.setAttribute(
      "points",
      [`${scaleX(0)},${scaleY(0.5)}`, ...points.map((p) => `${scaleX(p.patients)},${scaleY(p.fractionToA)}`)].join(" "),
    );
    svg.append(midline, polyline);
    card.append(svg, el("p", {}, ["share of patients on arm A after each block"]));
    return card;
  }
}
