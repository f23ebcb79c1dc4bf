/**
 * Success-criterion expressions, as understood by the gateway.
 *
 * This parser exists so the tree editor can give live feedback while the
 * user types, without a server round trip. It must accept exactly the
 * strings the server accepts and report errors at the same offsets; the
 * shared golden corpus (shared/criteria-golden.json) pins that agreement.
 *
 * Grammar (no arithmetic; comparisons are non-associative):
 *
 *   expr  := or
 *   or    := and ("OR" and)*
 *   and   := unary ("AND" unary)*
 *   unary := "NOT" unary | "(" expr ")" | cmp
 *   cmp   := term relop term
 *   relop := "<" | "<=" | ">" | ">=" | "==" | "!="
 *   term  := NUMBER | IDENT | agg "(" IDENT ")"
 *   agg   := "avg" | "min" | "max"
 *
 * NOT binds tighter than AND, which binds tighter than OR. On premature
 * end of input the error offset points at the start of the last token.
 */

export const AGG_FUNCS = ["avg", "min", "max"] as const;
export const RELOPS = ["<=", ">=", "==", "!=", "<", ">"] as const;

export type AggFunc = (typeof AGG_FUNCS)[number];
export type RelOp = (typeof RELOPS)[number];

export interface NumberTerm {
  kind: "number";
  value: number;
}

export interface ParamTerm {
  kind: "param";
  name: string;
}

export interface AggregateTerm {
  kind: "aggregate";
  func: AggFunc;
  attr: string;
}

export type Term = NumberTerm | ParamTerm | AggregateTerm;

export interface ComparisonNode {
  kind: "comparison";
  op: RelOp;
  left: Term;
  right: Term;
}

export interface NotNode {
  kind: "not";
  operand: CriterionNode;
}

export interface AndNode {
  kind: "and";
  parts: CriterionNode[];
}

export interface OrNode {
  kind: "or";
  parts: CriterionNode[];
}

export type CriterionNode = ComparisonNode | NotNode | AndNode | OrNode;

/** Parse failure with the byte offset of the offending token and the token
 * kinds that would have been accepted there (empty for lexer errors). */
export class CriterionParseError extends Error {
  readonly offset: number;
  readonly expected: string[];

  constructor(message: string, offset: number, expected: string[] = []) {
    super(message);
    this.name = "CriterionParseError";
    this.offset = offset;
    this.expected = expected;
  }
}

// ---------------------------------------------------------------------------
// lexer
// ---------------------------------------------------------------------------

type TokenKind =
  | "NUMBER"
  | "IDENT"
  | "LPAREN"
  | "RPAREN"
  | "RELOP"
  | "AND"
  | "OR"
  | "NOT"
  | "EOF";

interface Token {
  kind: TokenKind;
  text: string;
  pos: number;
}

const KEYWORDS = new Set(["AND", "OR", "NOT"]);

const isDigit = (ch: string): boolean => ch >= "0" && ch <= "9";
const isAlpha = (ch: string): boolean =>
  (ch >= "a" && ch <= "z") || (ch >= "A" && ch <= "Z");
const isWordChar = (ch: string): boolean =>
  isAlpha(ch) || isDigit(ch) || ch === "_";

function lex(source: string): Token[] {
  const tokens: Token[] = [];
  let i = 0;
  const n = source.length;
  while (i < n) {
    const ch = source[i]!;
    if (ch === " " || ch === "\t" || ch === "\r" || ch === "\n") {
      i += 1;
      continue;
    }
    if (ch === "(") {
      tokens.push({ kind: "LPAREN", text: "(", pos: i });
      i += 1;
      continue;
    }
    if (ch === ")") {
      tokens.push({ kind: "RPAREN", text: ")", pos: i });
      i += 1;
      continue;
    }
    const two = source.slice(i, i + 2);
    if (two === "<=" || two === ">=" || two === "==" || two === "!=") {
      tokens.push({ kind: "RELOP", text: two, pos: i });
      i += 2;
      continue;
    }
    if (ch === "<" || ch === ">") {
      tokens.push({ kind: "RELOP", text: ch, pos: i });
      i += 1;
      continue;
    }
    if (isDigit(ch) || (ch === "-" && i + 1 < n && isDigit(source[i + 1]!))) {
      const start = i;
      if (ch === "-") i += 1;
      while (i < n && isDigit(source[i]!)) i += 1;
      if (i < n && source[i] === "." && i + 1 < n && isDigit(source[i + 1]!)) {
        i += 1;
        while (i < n && isDigit(source[i]!)) i += 1;
      }
      tokens.push({ kind: "NUMBER", text: source.slice(start, i), pos: start });
      continue;
    }
    if (isAlpha(ch) || ch === "_") {
      const start = i;
      while (i < n && isWordChar(source[i]!)) i += 1;
      const word = source.slice(start, i);
      if (KEYWORDS.has(word)) {
        tokens.push({ kind: word as TokenKind, text: word, pos: start });
      } else {
        tokens.push({ kind: "IDENT", text: word, pos: start });
      }
      continue;
    }
    throw new CriterionParseError(`unexpected character ${JSON.stringify(ch)}`, i);
  }
  // end-of-input errors point at the START of the last token seen
  const eofPos = tokens.length > 0 ? tokens[tokens.length - 1]!.pos : 0;
  tokens.push({ kind: "EOF", text: "", pos: eofPos });
  return tokens;
}

// ---------------------------------------------------------------------------
// parser
// ---------------------------------------------------------------------------

class Parser {
  private readonly tokens: Token[];
  private index = 0;

  constructor(tokens: Token[]) {
    this.tokens = tokens;
  }

  peek(): Token {
    return this.tokens[this.index]!;
  }

  advance(): Token {
    const tok = this.tokens[this.index]!;
    if (tok.kind !== "EOF") this.index += 1;
    return tok;
  }

  fail(expected: readonly string[]): CriterionParseError {
    const tok = this.peek();
    const what = tok.kind === "EOF" ? "end of input" : JSON.stringify(tok.text);
    const wanted = expected.join(" or ");
    return new CriterionParseError(
      `expected ${wanted}, found ${what}`,
      tok.pos,
      [...expected],
    );
  }

  expect(kind: TokenKind, expected: readonly string[]): Token {
    if (this.peek().kind !== kind) throw this.fail(expected);
    return this.advance();
  }

  parseExpr(): CriterionNode {
    return this.parseOr();
  }

  parseOr(): CriterionNode {
    const parts = [this.parseAnd()];
    while (this.peek().kind === "OR") {
      this.advance();
      parts.push(this.parseAnd());
    }
    return parts.length === 1 ? parts[0]! : { kind: "or", parts };
  }

  parseAnd(): CriterionNode {
    const parts = [this.parseUnary()];
    while (this.peek().kind === "AND") {
      this.advance();
      parts.push(this.parseUnary());
    }
    return parts.length === 1 ? parts[0]! : { kind: "and", parts };
  }

  parseUnary(): CriterionNode {
    const tok = this.peek();
    if (tok.kind === "NOT") {
      this.advance();
      return { kind: "not", operand: this.parseUnary() };
    }
    if (tok.kind === "LPAREN") {
      this.advance();
      const inner = this.parseExpr();
      this.expect("RPAREN", [")"]);
      return inner;
    }
    return this.parseCmp();
  }

  parseCmp(): ComparisonNode {
    const left = this.parseTerm();
    const tok = this.peek();
    if (tok.kind !== "RELOP") throw this.fail(RELOPS);
    this.advance();
    const right = this.parseTerm();
    return { kind: "comparison", op: tok.text as RelOp, left, right };
  }

  parseTerm(): Term {
    const tok = this.peek();
    if (tok.kind === "NUMBER") {
      this.advance();
      return { kind: "number", value: Number(tok.text) };
    }
    if (tok.kind === "IDENT") {
      this.advance();
      if (
        (AGG_FUNCS as readonly string[]).includes(tok.text) &&
        this.peek().kind === "LPAREN"
      ) {
        this.advance();
        const attr = this.expect("IDENT", ["identifier"]);
        this.expect("RPAREN", [")"]);
        return { kind: "aggregate", func: tok.text as AggFunc, attr: attr.text };
      }
      return { kind: "param", name: tok.text };
    }
    throw this.fail(["number", "identifier", "NOT", "("]);
  }
}

/** Parse a criterion; throws {@link CriterionParseError} with an offset. */
export function parseCriterion(text: string): CriterionNode {
  const parser = new Parser(lex(text));
  const node = parser.parseExpr();
  if (parser.peek().kind !== "EOF") {
    throw parser.fail(["AND", "OR", "end of input"]);
  }
  return node;
}

// ---------------------------------------------------------------------------
// printing
// ---------------------------------------------------------------------------

// Numbers are stored as floats server-side and rendered in their float
// form, so whole numbers keep a trailing ".0" in canonical text.
function renderNumber(value: number): string {
  if (Number.isInteger(value) && Math.abs(value) < 1e16) {
    return value.toFixed(1);
  }
  return String(value);
}

function renderTerm(term: Term): string {
  if (term.kind === "number") return renderNumber(term.value);
  if (term.kind === "param") return term.name;
  return `${term.func}(${term.attr})`;
}

function precedence(node: CriterionNode): number {
  if (node.kind === "or") return 1;
  if (node.kind === "and") return 2;
  return 3;
}

function render(node: CriterionNode, minPrec: number): string {
  let text: string;
  switch (node.kind) {
    case "comparison":
      text = `${renderTerm(node.left)} ${node.op} ${renderTerm(node.right)}`;
      break;
    case "not":
      text = `NOT ${render(node.operand, 3)}`;
      break;
    case "and":
      text = node.parts.map((p) => render(p, 3)).join(" AND ");
      break;
    case "or":
      text = node.parts.map((p) => render(p, 2)).join(" OR ");
      break;
  }
  return precedence(node) < minPrec ? `(${text})` : text;
}

/** Canonical text form; parse(print(parse(s))) equals parse(s). */
export function printCriterion(node: CriterionNode): string {
  return render(node, 1);
}

// ---------------------------------------------------------------------------
// editor feedback
// ---------------------------------------------------------------------------

export type CriterionFeedback =
  | { ok: true; canonical: string }
  | { ok: false; message: string; offset: number; expected: string[]; caret: string };

/**
 * Live feedback for a criterion text field: canonical form when the text
 * parses, otherwise the error with a caret line pointing at the reported
 * offset (render it under the input in a monospace font).
 */
export function criterionFeedback(text: string): CriterionFeedback {
  try {
    return { ok: true, canonical: printCriterion(parseCriterion(text)) };
  } catch (err) {
    if (err instanceof CriterionParseError) {
      return {
        ok: false,
        message: err.message,
        offset: err.offset,
        expected: err.expected,
        caret: " ".repeat(err.offset) + "^",
      };
    }
    throw err;
  }
}
