/**
 * Editing model for policy-tree documents.
 *
 * The editor holds a working copy of the document the gateway consumes:
 * `{ params, nodes }` with goals nesting objectives nesting steps, and
 * dash-path ids ("0", "0-1", "0-1-0") that encode each node's position.
 * Every edit renumbers ids and recomputes diagnostics; saving is blocked
 * while structural problems remain. A document that is opened and saved
 * without edits comes back unchanged.
 */
import { CriterionParseError, parseCriterion } from "./criteria.js";

export const NODE_KINDS = ["goal", "objective", "step"] as const;
export type NodeKind = (typeof NODE_KINDS)[number];

export const MODEL_NAMES = ["rad", "wine"] as const;

/** Parameters every step must end up with after ancestor inheritance. */
export const REQUIRED_STEP_PARAMS = [
  "population_model",
  "rounds",
  "population_sizes",
] as const;

const CHILD_KIND: Record<string, NodeKind | undefined> = {
  goal: "objective",
  objective: "step",
};

export interface TreeNodeDoc {
  id?: unknown;
  kind?: unknown;
  title?: unknown;
  params?: unknown;
  criteria?: unknown;
  model?: unknown;
  children?: unknown;
  [key: string]: unknown;
}

export interface PolicyDoc {
  params?: unknown;
  nodes?: unknown;
  [key: string]: unknown;
}

export type DiagnosticKind = "structure" | "id" | "criterion" | "param";

export interface Diagnostic {
  /** Dash-path of the offending node, or null for document-level problems. */
  nodeId: string | null;
  kind: DiagnosticKind;
  message: string;
  /** For criterion diagnostics: index into the node's criteria list. */
  criterionIndex?: number;
  /** For criterion diagnostics: byte offset of the parse error. */
  offset?: number;
}

export interface TreeEditState {
  doc: PolicyDoc;
  diagnostics: Diagnostic[];
  dirty: boolean;
}

/** Raised when an edit is structurally impossible (wrong nesting, bad id). */
export class TreeEditError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TreeEditError";
  }
}

const deepCopy = <T>(value: T): T => JSON.parse(JSON.stringify(value)) as T;

const isRecord = (value: unknown): value is Record<string, unknown> =>
  typeof value === "object" && value !== null && !Array.isArray(value);

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

function checkNode(
  doc: unknown,
  expectedKind: NodeKind,
  expectedId: string,
  out: Diagnostic[],
): void {
  if (!isRecord(doc)) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: "node must be an object",
    });
    return;
  }
  const node = doc as TreeNodeDoc;
  const kind = node.kind;
  if (typeof kind !== "string" || !(NODE_KINDS as readonly string[]).includes(kind)) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: `unknown kind ${JSON.stringify(kind)}`,
    });
    return;
  }
  if (kind !== expectedKind) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: `expected a ${expectedKind}, found ${kind}`,
    });
  }
  if (node.id !== expectedId) {
    out.push({
      nodeId: expectedId,
      kind: "id",
      message: `expected node id ${JSON.stringify(expectedId)}, found ${JSON.stringify(node.id)}`,
    });
  }
  if (node.params !== undefined && node.params !== null && !isRecord(node.params)) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: "params must be an object",
    });
  }

  const criteria = node.criteria ?? [];
  if (!Array.isArray(criteria) || criteria.some((c) => typeof c !== "string")) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: "criteria must be a list of strings",
    });
  } else {
    if (criteria.length > 0 && kind !== "goal") {
      out.push({
        nodeId: expectedId,
        kind: "structure",
        message: "criteria are only allowed on goals",
      });
    }
    criteria.forEach((text, index) => {
      try {
        parseCriterion(text as string);
      } catch (err) {
        if (err instanceof CriterionParseError) {
          out.push({
            nodeId: expectedId,
            kind: "criterion",
            message: err.message,
            criterionIndex: index,
            offset: err.offset,
          });
        } else {
          throw err;
        }
      }
    });
  }

  if (node.model !== undefined && node.model !== null && kind !== "step") {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: "model is only allowed on steps",
    });
  }
  const children = node.children ?? [];
  if (!Array.isArray(children)) {
    out.push({
      nodeId: expectedId,
      kind: "structure",
      message: "children must be a list",
    });
    return;
  }
  if (kind === "step") {
    if (!(MODEL_NAMES as readonly string[]).includes(node.model as string)) {
      out.push({
        nodeId: expectedId,
        kind: "structure",
        message: `step model must be one of ${MODEL_NAMES.join(", ")}, found ${JSON.stringify(node.model)}`,
      });
    }
    if (children.length > 0) {
      out.push({
        nodeId: expectedId,
        kind: "structure",
        message: "steps cannot have children",
      });
    }
    return;
  }
  const childKind = CHILD_KIND[kind]!;
  children.forEach((child, index) => {
    checkNode(child, childKind, `${expectedId}-${index}`, out);
  });
}

function checkStepParams(doc: PolicyDoc, out: Diagnostic[]): void {
  const rootParams = isRecord(doc.params) ? doc.params : {};

  const descend = (node: unknown, inherited: Record<string, unknown>, id: string) => {
    if (!isRecord(node)) return;
    const own = isRecord(node.params) ? node.params : {};
    const effective = { ...inherited, ...own };
    if (node.kind === "step") {
      const missing = REQUIRED_STEP_PARAMS.filter((key) => !(key in effective));
      if (missing.length > 0) {
        out.push({
          nodeId: id,
          kind: "param",
          message: `step is missing required parameters: ${missing.join(", ")}`,
        });
      }
      return;
    }
    const children = Array.isArray(node.children) ? node.children : [];
    children.forEach((child, index) =>
      descend(child, effective, `${id}-${index}`),
    );
  };

  const nodes = Array.isArray(doc.nodes) ? doc.nodes : [];
  nodes.forEach((node, index) => descend(node, rootParams, String(index)));
}

/** All problems in the working document, shallowest first. */
export function computeDiagnostics(doc: PolicyDoc): Diagnostic[] {
  const out: Diagnostic[] = [];
  if (doc.params !== undefined && doc.params !== null && !isRecord(doc.params)) {
    out.push({
      nodeId: null,
      kind: "structure",
      message: "document params must be an object",
    });
  }
  if (!Array.isArray(doc.nodes) || doc.nodes.length === 0) {
    out.push({
      nodeId: null,
      kind: "structure",
      message: "policy document needs a non-empty 'nodes' list",
    });
    return out;
  }
  doc.nodes.forEach((node, index) => checkNode(node, "goal", String(index), out));
  checkStepParams(doc, out);
  return out;
}

/** Problems that make the document unsendable. Missing step parameters are
 * reported but do not block saving a work in progress. */
export function structuralErrors(state: TreeEditState): Diagnostic[] {
  return state.diagnostics.filter((d) => d.kind !== "param");
}

export function canSave(state: TreeEditState): boolean {
  return structuralErrors(state).length === 0;
}

// ---------------------------------------------------------------------------
// opening, saving, ids
// ---------------------------------------------------------------------------

export function openTree(doc: PolicyDoc): TreeEditState {
  const working = deepCopy(doc);
  return { doc: working, diagnostics: computeDiagnostics(working), dirty: false };
}

/** The document to send to the gateway; a deep copy so further edits do not
 * alias what the caller holds. Throws while structural errors remain. */
export function saveDocument(state: TreeEditState): PolicyDoc {
  if (!canSave(state)) {
    const first = structuralErrors(state)[0]!;
    const where = first.nodeId === null ? "document" : `node ${first.nodeId}`;
    throw new TreeEditError(`cannot save: ${where}: ${first.message}`);
  }
  return deepCopy(state.doc);
}

/** Renumber every node's id to its dash-path position. */
export function recomputeIds(doc: PolicyDoc): void {
  const renumber = (node: unknown, id: string) => {
    if (!isRecord(node)) return;
    node.id = id;
    const children = Array.isArray(node.children) ? node.children : [];
    children.forEach((child, index) => renumber(child, `${id}-${index}`));
  };
  const nodes = Array.isArray(doc.nodes) ? doc.nodes : [];
  nodes.forEach((node, index) => renumber(node, String(index)));
}

export function allowedChildKind(kind: NodeKind): NodeKind | null {
  return CHILD_KIND[kind] ?? null;
}

function findNode(doc: PolicyDoc, id: string): TreeNodeDoc {
  const nodes = Array.isArray(doc.nodes) ? doc.nodes : [];
  const path = id.split("-").map((part) => Number(part));
  let list: unknown[] = nodes;
  let node: unknown;
  for (const index of path) {
    node = list[index];
    if (!isRecord(node)) throw new TreeEditError(`no node ${JSON.stringify(id)}`);
    list = Array.isArray(node.children) ? node.children : [];
  }
  if (!isRecord(node)) throw new TreeEditError(`no node ${JSON.stringify(id)}`);
  return node as TreeNodeDoc;
}

function afterEdit(state: TreeEditState): void {
  recomputeIds(state.doc);
  state.diagnostics = computeDiagnostics(state.doc);
  state.dirty = true;
}

// ---------------------------------------------------------------------------
// edits
// ---------------------------------------------------------------------------

/**
 * Add a child under `parentId` (or a new goal at the root when null).
 * The nesting is fixed: goals contain objectives, objectives contain steps,
 * steps are leaves. Passing a `kind` that disagrees is refused, which is
 * how the editor blocks e.g. a step directly under a goal.
 */
export function addChild(
  state: TreeEditState,
  parentId: string | null,
  kind?: NodeKind,
  title = "",
): string {
  let node: TreeNodeDoc;
  if (parentId === null) {
    if (kind !== undefined && kind !== "goal") {
      throw new TreeEditError(`top-level nodes are goals, not ${kind}s`);
    }
    node = { id: "", kind: "goal", title, params: {}, criteria: [], children: [] };
    if (!Array.isArray(state.doc.nodes)) state.doc.nodes = [];
    (state.doc.nodes as unknown[]).push(node);
  } else {
    const parent = findNode(state.doc, parentId);
    const childKind = allowedChildKind(parent.kind as NodeKind);
    if (childKind === null) {
      throw new TreeEditError("steps cannot have children");
    }
    if (kind !== undefined && kind !== childKind) {
      throw new TreeEditError(
        `a ${parent.kind} can only contain ${childKind}s, not ${kind}s`,
      );
    }
    node =
      childKind === "step"
        ? { id: "", kind: "step", title, params: {}, model: null, children: [] }
        : { id: "", kind: childKind, title, params: {}, children: [] };
    if (!Array.isArray(parent.children)) parent.children = [];
    (parent.children as unknown[]).push(node);
  }
  afterEdit(state);
  return node.id as string;
}

export function removeNode(state: TreeEditState, id: string): void {
  findNode(state.doc, id); // throws when absent
  const path = id.split("-").map((part) => Number(part));
  const leaf = path.pop()!;
  let list = state.doc.nodes as unknown[];
  for (const index of path) {
    const node = list[index] as TreeNodeDoc;
    list = node.children as unknown[];
  }
  list.splice(leaf, 1);
  afterEdit(state);
}

export function retitleNode(state: TreeEditState, id: string, title: string): void {
  findNode(state.doc, id).title = title;
  afterEdit(state);
}

export function setNodeParams(
  state: TreeEditState,
  id: string,
  params: Record<string, unknown>,
): void {
  findNode(state.doc, id).params = params;
  afterEdit(state);
}

export function setCriteria(state: TreeEditState, id: string, criteria: string[]): void {
  findNode(state.doc, id).criteria = criteria;
  afterEdit(state);
}

export function setModel(state: TreeEditState, id: string, model: string): void {
  findNode(state.doc, id).model = model;
  afterEdit(state);
}
