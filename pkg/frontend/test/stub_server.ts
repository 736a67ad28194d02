/**
 * In-process stub of the planner service for contract tests.
 *
 * Implements the slice of behavior the UI depends on: plan/stats reads,
 * metadata updates with re-plan (manifest hash changes), selection posting
 * with idempotency (repeat id replays the stored response; same id with a
 * divergent body is a 409), and FastAPI-shaped 422 field errors.
 */

import * as http from "node:http";
import type { AddressInfo } from "node:net";
import type {
  Adjustment,
  PlanDoc,
  PlanSetDoc,
  Selection,
  SelectionRecord,
  StatsDoc,
} from "../src/types";

interface StoredRequest {
  bodyHash: string;
  response: unknown;
}

export class StubService {
  readonly audit: SelectionRecord[] = [];
  readonly requests = new Map<string, StoredRequest>();
  metaVersion = 0;
  failNextSelectionWith409 = false;

  private server?: http.Server;

  plans(): PlanSetDoc {
    const mk = (label: string, total: number): PlanDoc => ({
      label,
      title: "T00",
      issue: "I010",
      scenario: [0.75, 0.8],
      allocations: { P1: Math.floor(total / 2), P2: Math.ceil(total / 2) },
      total_supply: total,
      kpis_forecast: {
        total_supply: total, revenue: "50.0000", cost: "30.0000",
        profit: "20.0000", oos_count: 1, sellthrough_rate: 0.8,
      },
      annotations: [],
    });
    return {
      optimal_supply: mk("optimal_supply", 10),
      optimal_distribution: mk("optimal_distribution", 12),
      scenario_frontier: [
        {
          scenario: [0.65, 0.65],
          kpis: { total_supply: 9, revenue: "45.0000", cost: "28.0000",
                  profit: "17.0000", oos_count: 2, sellthrough_rate: 0.85 },
          reference_kpis: { total_supply: 14, revenue: "52.0000",
                            cost: "36.0000", profit: "16.0000", oos_count: 1,
                            sellthrough_rate: 0.7 },
        },
      ],
      constraint_status: "met",
      manifest_hash: `stub-manifest-${this.metaVersion}`,
    };
  }

  stats(): StatsDoc {
    return {
      title: "T00",
      series: [
        { issue: "I008", period_start: "2022-08-01", total_supply: 14,
          total_sales: 9, sellthrough_rate: 0.64, profit: "12.0000", oos_count: 1 },
        { issue: "I009", period_start: "2022-09-01", total_supply: 13,
          total_sales: 11, sellthrough_rate: 0.85, profit: "15.5000", oos_count: 2 },
      ],
    };
  }

  async start(): Promise<string> {
    this.server = http.createServer((req, res) => void this.handle(req, res));
    await new Promise<void>((resolve) => this.server!.listen(0, "127.0.0.1", resolve));
    const address = this.server!.address() as AddressInfo;
    return `http://127.0.0.1:${address.port}`;
  }

  async stop(): Promise<void> {
    if (this.server) {
      await new Promise<void>((resolve, reject) =>
        this.server!.close((err) => (err ? reject(err) : resolve())));
    }
  }

  private async handle(req: http.IncomingMessage, res: http.ServerResponse): Promise<void> {
    const chunks: Buffer[] = [];
    for await (const chunk of req) chunks.push(chunk as Buffer);
    const raw = Buffer.concat(chunks).toString("utf-8");
    const url = req.url ?? "";
    const send = (status: number, body: unknown) => {
      res.writeHead(status, { "Content-Type": "application/json" });
      res.end(JSON.stringify(body));
    };

    if (req.method === "GET" && url === "/health") {
      return send(200, { status: "ok", manifest: "stub" });
    }
    if (req.method === "GET" && url === "/issues") {
      return send(200, [{
        title: "T00", issue: "I010", period_start: "2022-10-01",
        period_end: "2022-10-28", price: "5.00", n_total: 12, delta: 2,
        status: this.audit.length > 0 ? "selected" : "planned",
      }]);
    }
    if (req.method === "GET" && url.endsWith("/plans")) {
      return send(200, this.plans());
    }
    if (req.method === "GET" && url.endsWith("/stats")) {
      return send(200, this.stats());
    }
    if (req.method === "GET" && url.endsWith("/selection")) {
      const last = this.audit[this.audit.length - 1];
      if (!last) return send(404, { detail: "no selection recorded" });
      return send(200, last);
    }
    if (req.method === "PUT" && url.endsWith("/meta")) {
      return this.handleMeta(raw, send);
    }
    if (req.method === "POST" && url.endsWith("/selection")) {
      return this.handleSelection(raw, send);
    }
    send(404, { detail: `no route for ${req.method} ${url}` });
  }

  private handleMeta(raw: string, send: (s: number, b: unknown) => void): void {
    const body = JSON.parse(raw) as Record<string, unknown>;
    const detail: { loc: (string | number)[]; msg: string; type: string }[] = [];
    const refs = body["references"] as unknown[] | undefined;
    if (refs && refs.length !== 0 && refs.length !== 2) {
      detail.push({ loc: ["body", "references"],
                    msg: "references must hold exactly 0 or 2 issues",
                    type: "value_error" });
    }
    const nTotal = body["n_total"] as number | undefined;
    const delta = body["delta"] as number | undefined;
    if (nTotal !== undefined && delta !== undefined && delta > nTotal) {
      detail.push({ loc: ["body", "delta"],
                    msg: "delta must satisfy 0 <= delta <= n_total",
                    type: "value_error" });
    }
    if (detail.length > 0) return send(422, { detail });
    const requestId = String(body["request_id"]);
    const hash = JSON.stringify(body);
    const stored = this.requests.get(requestId);
    if (stored) {
      if (stored.bodyHash !== hash) {
        return send(409, { detail: `request id ${requestId} already used` });
      }
      return send(200, stored.response);
    }
    this.metaVersion += 1;
    const response = { status: "replanned",
                       manifest_hash: `stub-manifest-${this.metaVersion}` };
    this.requests.set(requestId, { bodyHash: hash, response });
    send(200, response);
  }

  private handleSelection(raw: string, send: (s: number, b: unknown) => void): void {
    const body = JSON.parse(raw) as Selection;
    const detail: { loc: (string | number)[]; msg: string; type: string }[] = [];
    if (!["optimal_supply", "optimal_distribution", "manual"].includes(body.label)) {
      detail.push({ loc: ["body", "label"], msg: "unknown plan label",
                    type: "value_error" });
    }
    (body.adjustments ?? []).forEach((adj: Adjustment, k: number) => {
      if (adj.supply < 0) {
        detail.push({ loc: ["body", "adjustments", k, "supply"],
                      msg: "adjusted supply must be >= 0", type: "value_error" });
      }
      if (!adj.reason) {
        detail.push({ loc: ["body", "adjustments", k, "reason"],
                      msg: "reason required", type: "value_error" });
      }
    });
    if (detail.length > 0) return send(422, { detail });
    if (this.failNextSelectionWith409) {
      this.failNextSelectionWith409 = false;
      return send(409, { detail: "request id collision injected by test" });
    }
    const hash = JSON.stringify(body);
    const stored = this.requests.get(body.request_id);
    if (stored) {
      if (stored.bodyHash !== hash) {
        return send(409, { detail: `request id ${body.request_id} already used` });
      }
      return send(200, stored.response);
    }
    const entry: SelectionRecord = {
      kind: "selection", title: "T00", issue: "I010", label: body.label,
      adjustments: body.adjustments, actor: body.actor,
      request_id: body.request_id,
    };
    this.audit.push(entry);
    const response = { status: "recorded" };
    this.requests.set(body.request_id, { bodyHash: hash, response });
    send(200, response);
  }
}
