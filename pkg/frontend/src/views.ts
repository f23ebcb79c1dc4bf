/**
 * Pure view models over gateway response documents.
 *
 * Each builder turns a response into exactly what a panel renders: rows,
 * labels, badge flags. Numeric values are passed through verbatim from the
 * document, never recomputed or rounded, so what the user sees is what the
 * server produced. The one formatting exception is the catalog's bias
 * statistics, which are shown as percentages next to the raw fraction.
 */

type Doc = Record<string, unknown>;

const asDoc = (value: unknown): Doc =>
  typeof value === "object" && value !== null && !Array.isArray(value)
    ? (value as Doc)
    : {};

const asList = (value: unknown): unknown[] => (Array.isArray(value) ? value : []);

const asText = (value: unknown): string => (typeof value === "string" ? value : "");

// ---------------------------------------------------------------------------
// ranking
// ---------------------------------------------------------------------------

export interface RankingRow {
  objectiveId: string;
  title: string;
  /** Fraction of the goal's criteria this objective satisfied, verbatim. */
  proportion: number;
  /** True when this objective tops the goal's ranking (ties share it). */
  best: boolean;
}

export interface GoalRanking {
  goalId: string;
  title: string;
  noCriteria: boolean;
  rows: RankingRow[];
  /** True when more than one objective shares the top proportion. */
  tie: boolean;
}

export interface RankingViewModel {
  seed: number;
  goals: GoalRanking[];
}

/**
 * Ranking panel rows. Accepts either the full results document or the
 * lighter ranking document; objective titles are resolved when present.
 */
export function rankingView(doc: unknown): RankingViewModel {
  const top = asDoc(doc);
  const goals = asList(top.goals).map((raw) => {
    const goal = asDoc(raw);
    const titles = new Map<string, string>();
    for (const objective of asList(goal.objectives)) {
      const o = asDoc(objective);
      titles.set(asText(o.id), asText(o.title));
    }
    const ranking = asDoc(goal.ranking);
    const entries = Object.entries(ranking).filter(
      (pair): pair is [string, number] => typeof pair[1] === "number",
    );
    const best = entries.length > 0 ? Math.max(...entries.map(([, p]) => p)) : NaN;
    const rows = entries.map(([objectiveId, proportion]) => ({
      objectiveId,
      title: titles.get(objectiveId) ?? objectiveId,
      proportion,
      best: proportion === best,
    }));
    return {
      goalId: asText(goal.id),
      title: asText(goal.title),
      noCriteria: goal.no_criteria === true,
      rows,
      tie: rows.filter((row) => row.best).length > 1,
    };
  });
  return { seed: typeof top.seed === "number" ? top.seed : 0, goals };
}

// ---------------------------------------------------------------------------
// aggregates and comparison
// ---------------------------------------------------------------------------

export interface AggregateRow {
  attribute: string;
  avg: number;
  min: number;
  max: number;
}

export interface AggregateTable {
  objectiveId: string;
  title: string;
  rows: AggregateRow[];
}

/** Per-attribute avg/min/max rows, in the document's key order, verbatim. */
export function aggregateTable(objective: unknown): AggregateTable {
  const obj = asDoc(objective);
  const aggregates = asDoc(obj.aggregates);
  const rows = Object.entries(aggregates).map(([attribute, stats]) => {
    const s = asDoc(stats);
    return {
      attribute,
      avg: s.avg as number,
      min: s.min as number,
      max: s.max as number,
    };
  });
  return { objectiveId: asText(obj.id), title: asText(obj.title), rows };
}

export interface CriterionOutcome {
  text: string;
  satisfied: boolean;
}

export interface ComparisonColumn {
  objectiveId: string;
  title: string;
  proportion: number;
  satisfied: number;
  total: number;
  criteria: CriterionOutcome[];
  best: boolean;
}

export interface ComparisonRow {
  attribute: string;
  left: AggregateRow | null;
  right: AggregateRow | null;
}

export interface ComparisonViewModel {
  goalId: string;
  goalTitle: string;
  left: ComparisonColumn;
  right: ComparisonColumn;
  /** Union of both objectives' attributes, left order first. */
  rows: ComparisonRow[];
  tie: boolean;
}

function comparisonColumn(objective: Doc): Omit<ComparisonColumn, "best"> {
  return {
    objectiveId: asText(objective.id),
    title: asText(objective.title),
    proportion: objective.proportion as number,
    satisfied: objective.satisfied as number,
    total: objective.total as number,
    criteria: asList(objective.criteria).map((raw) => {
      const c = asDoc(raw);
      return { text: asText(c.text), satisfied: c.satisfied === true };
    }),
  };
}

/**
 * Two objectives of one goal side by side: criteria outcomes per column,
 * aligned aggregate rows, and the ranking badge on the better column (or
 * both when their proportions tie).
 */
export function comparisonView(
  results: unknown,
  goalId: string,
  leftId: string,
  rightId: string,
): ComparisonViewModel {
  const goal = asList(asDoc(results).goals)
    .map(asDoc)
    .find((g) => g.id === goalId);
  if (goal === undefined) {
    throw new Error(`no goal ${JSON.stringify(goalId)} in results`);
  }
  const objectives = asList(goal.objectives).map(asDoc);
  const pick = (id: string): Doc => {
    const found = objectives.find((o) => o.id === id);
    if (found === undefined) {
      throw new Error(`no objective ${JSON.stringify(id)} under goal ${goalId}`);
    }
    return found;
  };
  const leftDoc = pick(leftId);
  const rightDoc = pick(rightId);
  const left = comparisonColumn(leftDoc);
  const right = comparisonColumn(rightDoc);
  const tie = left.proportion === right.proportion;

  const leftRows = aggregateTable(leftDoc).rows;
  const rightRows = aggregateTable(rightDoc).rows;
  const rightByAttr = new Map(rightRows.map((row) => [row.attribute, row]));
  const attributes: string[] = leftRows.map((row) => row.attribute);
  for (const row of rightRows) {
    if (!attributes.includes(row.attribute)) attributes.push(row.attribute);
  }
  const leftByAttr = new Map(leftRows.map((row) => [row.attribute, row]));
  const rows = attributes.map((attribute) => ({
    attribute,
    left: leftByAttr.get(attribute) ?? null,
    right: rightByAttr.get(attribute) ?? null,
  }));

  return {
    goalId: asText(goal.id),
    goalTitle: asText(goal.title),
    left: { ...left, best: tie || left.proportion > right.proportion },
    right: { ...right, best: tie || right.proportion > left.proportion },
    rows,
    tie,
  };
}

// ---------------------------------------------------------------------------
// per-cycle traces
// ---------------------------------------------------------------------------

export interface TracePoint {
  cycle: number;
  value: number;
}

export interface RoundSeries {
  round: number;
  populationSize: number;
  seed: number;
  /** One polyline per attribute, points in cycle order. */
  series: Record<string, TracePoint[]>;
}

export interface StepTraces {
  stepId: string;
  title: string;
  model: string;
  rounds: RoundSeries[];
}

/** Line-chart series for every step and round of an objective, one point
 * per recorded cycle, values verbatim from the trace. */
export function traceSeries(objective: unknown): StepTraces[] {
  return asList(asDoc(objective).steps).map((rawStep) => {
    const step = asDoc(rawStep);
    const rounds = asList(step.rounds).map((rawRound) => {
      const round = asDoc(rawRound);
      const series: Record<string, TracePoint[]> = {};
      for (const rawEntry of asList(round.trace)) {
        const entry = asDoc(rawEntry);
        const cycle = entry.index as number;
        for (const [attribute, value] of Object.entries(asDoc(entry.attributes))) {
          (series[attribute] ??= []).push({ cycle, value: value as number });
        }
      }
      return {
        round: round.round as number,
        populationSize: round.population_size as number,
        seed: round.seed as number,
        series,
      };
    });
    return {
      stepId: asText(step.id),
      title: asText(step.title),
      model: asText(step.model),
      rounds,
    };
  });
}

// ---------------------------------------------------------------------------
// catalog
// ---------------------------------------------------------------------------

export interface BiasStatRow {
  statement: string;
  /** Raw fraction from the document. */
  fraction: number;
  /** The fraction rendered as a percentage, e.g. 0.034 becomes "3.4%". */
  percent: string;
}

export interface ComplianceView {
  purpose: string;
  legalBasis: string;
  dataCategories: string[];
  retentionPolicy: string;
  reviewer: string;
  biasMeasures: string | null;
  biasStats: BiasStatRow[];
  legalConstraints: string | null;
  tradeoffs: string | null;
  conceptNotes: { fieldName: string; definition: string }[];
}

export function formatPercent(fraction: number): string {
  return (fraction * 100).toFixed(2).replace(/\.?0+$/, "") + "%";
}

/** Full governance record of an artifact, ready to render as a card. */
export function complianceView(doc: unknown): ComplianceView {
  const c = asDoc(doc);
  return {
    purpose: asText(c.purpose),
    legalBasis: asText(c.legal_basis),
    dataCategories: asList(c.data_categories).map(asText),
    retentionPolicy: asText(c.retention_policy),
    reviewer: asText(c.reviewer),
    biasMeasures: typeof c.bias_measures === "string" ? c.bias_measures : null,
    biasStats: asList(c.bias_statistics).map((raw) => {
      const stat = asDoc(raw);
      const fraction = stat.fraction as number;
      return {
        statement: asText(stat.statement),
        fraction,
        percent: formatPercent(fraction),
      };
    }),
    legalConstraints:
      typeof c.legal_constraints === "string" ? c.legal_constraints : null,
    tradeoffs: typeof c.tradeoffs === "string" ? c.tradeoffs : null,
    conceptNotes: asList(c.concept_notes).map((raw) => {
      const note = asDoc(raw);
      return { fieldName: asText(note.field_name), definition: asText(note.definition) };
    }),
  };
}

export interface FunctionCard {
  id: string;
  name: string;
  kind: string;
  builtin: string;
  compliance: ComplianceView;
}

export interface ChainNode {
  position: number;
  functionId: string;
  name: string;
  builtin: string;
}

export interface SchemaRow {
  name: string;
  valueType: string;
  identifierClass: string;
}

export interface DatasetCard {
  id: string;
  name: string;
  retentionDays: number | null;
  schema: SchemaRow[];
  /** The ingest chain in application order, resolved to function names. */
  chain: ChainNode[];
  compliance: ComplianceView;
}

export interface CatalogViewModel {
  functions: FunctionCard[];
  datasets: DatasetCard[];
  /** Shown instead of the tables when nothing is registered. */
  emptyMessage: string | null;
}

/**
 * Catalog browser model: every function and dataset with its compliance
 * card, dataset ingest chains resolved in order, and an empty-state
 * message when the registry has nothing to show.
 */
export function catalogView(functionsDoc: unknown, datasetsDoc: unknown): CatalogViewModel {
  const functions = asList(asDoc(functionsDoc).artifacts).map((raw) => {
    const fn = asDoc(raw);
    return {
      id: asText(fn.id),
      name: asText(fn.name),
      kind: asText(fn.kind),
      builtin: asText(fn.builtin_ref),
      compliance: complianceView(fn.compliance),
    };
  });
  const byId = new Map(functions.map((fn) => [fn.id, fn]));
  const datasets = asList(asDoc(datasetsDoc).artifacts).map((raw) => {
    const ds = asDoc(raw);
    const chain = asList(ds.ingest_chain).map((functionId, position) => {
      const id = asText(functionId);
      const fn = byId.get(id);
      return {
        position,
        functionId: id,
        name: fn?.name ?? id,
        builtin: fn?.builtin ?? "",
      };
    });
    return {
      id: asText(ds.id),
      name: asText(ds.name),
      retentionDays: typeof ds.retention_days === "number" ? ds.retention_days : null,
      schema: asList(ds.schema).map((rawField) => {
        const field = asDoc(rawField);
        return {
          name: asText(field.name),
          valueType: asText(field.value_type),
          identifierClass: asText(field.identifier_class),
        };
      }),
      chain,
      compliance: complianceView(ds.compliance),
    };
  });
  return {
    functions,
    datasets,
    emptyMessage:
      functions.length === 0 && datasets.length === 0
        ? "Nothing registered yet. Register a function or dataset to get started."
        : null,
  };
}

// ---------------------------------------------------------------------------
// status and errors
// ---------------------------------------------------------------------------

export interface RunStatusViewModel {
  runId: string;
  status: string;
  seed: number;
  submittedAt: string | null;
  error: string | null;
  label: string;
}

export function runStatusView(statusDoc: unknown): RunStatusViewModel {
  const doc = asDoc(statusDoc);
  const runId = asText(doc.run_id);
  const status = asText(doc.status);
  const error = typeof doc.error === "string" ? doc.error : null;
  return {
    runId,
    status,
    seed: typeof doc.seed === "number" ? doc.seed : 0,
    submittedAt: typeof doc.submitted_at === "string" ? doc.submitted_at : null,
    error,
    label: error === null ? `run ${runId}: ${status}` : `run ${runId}: ${status} (${error})`,
  };
}

export interface ErrorViewModel {
  code: string;
  message: string;
  /** Extra lines to show under the message (rule id, field, caret hint). */
  detail: string[];
  offset: number | null;
  expected: string[];
}

/** Render a gateway error envelope (or a thrown GatewayError's fields). */
export function errorView(errorDoc: unknown): ErrorViewModel {
  const outer = asDoc(errorDoc);
  const env = "error" in outer ? asDoc(outer.error) : outer;
  const detail: string[] = [];
  if (typeof env.rule === "string") detail.push(`denied by rule ${env.rule}`);
  if (typeof env.field === "string") detail.push(`field: ${env.field}`);
  const offset = typeof env.offset === "number" ? env.offset : null;
  const expected = asList(env.expected).map(asText);
  if (offset !== null) detail.push(`at offset ${offset}`);
  if (expected.length > 0) detail.push(`expected ${expected.join(" or ")}`);
  return {
    code: asText(env.code),
    message: asText(env.message),
    detail,
    offset,
    expected,
  };
}
