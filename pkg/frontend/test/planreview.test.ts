import assert from "node:assert/strict";
import { after, before, beforeEach, describe, it } from "node:test";
import { ApiClient } from "../src/api";
import { PlanReview } from "../src/planreview";
import { StubService } from "./stub_server";

describe("plan review flow", () => {
  let stub: StubService;
  let baseUrl: string;

  before(async () => {
    stub = new StubService();
    baseUrl = await stub.start();
  });

  after(async () => {
    await stub.stop();
  });

  beforeEach(() => {
    stub.audit.length = 0;
    stub.requests.clear();
    stub.failNextSelectionWith409 = false;
  });

  function review(): PlanReview {
    const api = new ApiClient({ baseUrl });
    return new PlanReview(api, "T00", "I010", "planner-a");
  }

  it("plain selection passes the chosen label with no adjustments", async () => {
    const r = review();
    await r.load();
    r.choose("optimal_distribution");
    assert.equal(await r.submit(), true);
    assert.equal(stub.audit.length, 1);
    const entry = stub.audit[0]!;
    assert.equal(entry.label, "optimal_distribution");
    assert.deepEqual(entry.adjustments, []);
    assert.equal(r.state.submitted?.label, "optimal_distribution");
  });

  it("a double click produces exactly one audit entry", async () => {
    const r = review();
    await r.load();
    const [first, second] = await Promise.all([r.submit(), r.submit()]);
    assert.equal(stub.audit.length, 1);
    assert.ok(first || second);
    assert.ok(!(first && second), "only one click may report success");
  });

  it("sequential re-submit of the same draft stays idempotent", async () => {
    const r = review();
    await r.load();
    // simulate a retry that reuses the draft id: submit, then force the
    // same id through a second client call
    assert.equal(await r.submit(), true);
    assert.equal(stub.audit.length, 1);
    // second, separate submission (new draft id) is a new selection
    r.editPos("P1", 7, "stock the flagship");
    assert.equal(await r.submit(), true);
    assert.equal(stub.audit.length, 2);
  });

  it("editing a POS requires a reason and a non-negative supply", async () => {
    const r = review();
    await r.load();
    r.editPos("P1", -1, "");
    assert.equal(await r.submit(), false);
    assert.equal(stub.audit.length, 0);
    assert.ok(r.state.fieldErrors["adjustments.0.supply"]);
    assert.ok(r.state.fieldErrors["adjustments.0.reason"]);
  });

  it("server 422 maps onto inline field errors", async () => {
    const r = review();
    await r.load();
    // bypass client validation to prove the server path also lands inline
    r.state.adjustments.set("P1", { supply: 3, reason: "ok" });
    (r.state.adjustments.get("P1") as { supply: number }).supply = -4;
    assert.equal(await r.submit(), false);
    assert.equal(stub.audit.length, 0);
    const keys = Object.keys(r.state.fieldErrors);
    assert.ok(keys.some((k) => k.includes("adjustments") && k.includes("supply")),
      `expected an adjustments supply error, got ${keys}`);
  });

  it("an edit equal to the plan value cancels the adjustment", async () => {
    const r = review();
    await r.load();
    const base = r.basePlanAllocations()!;
    r.editPos("P1", base["P1"]! + 2, "bump");
    r.editPos("P1", base["P1"]!, "back");
    assert.equal(await r.submit(), true);
    assert.deepEqual(stub.audit[0]!.adjustments, []);
  });

  it("409 triggers refresh and a single retry with a fresh id", async () => {
    const r = review();
    await r.load();
    stub.failNextSelectionWith409 = true;
    assert.equal(await r.submit(), true);
    assert.equal(stub.audit.length, 1);
  });

  it("submitted state is refetched from the server audit log", async () => {
    const r = review();
    await r.load();
    r.editPos("P2", 9, "window display");
    assert.equal(await r.submit(), true);
    assert.equal(r.state.submitted?.kind, "selection");
    assert.deepEqual(r.state.submitted?.adjustments,
      [{ pos: "P2", supply: 9, reason: "window display" }]);
  });
});
