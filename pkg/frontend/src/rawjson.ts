/** JSON parser that remembers each number's source text.
 *
 * JSON.parse collapses 4215.20 and 4215.2 into one double, and String()
 * re-prints 0.0 as "0", so a page built on parsed numbers cannot
 * promise to show exactly what the server sent. This parser returns the
 * parsed value plus a map from JSON pointer (RFC 6901) to the exact
 * numeric literal at that location. Strings are unescaped by parsing,
 * which already round-trips their value byte-for-byte.
 */

export type RawNumbers = Map<string, string>;

export interface RawParse {
  value: unknown;
  numbers: RawNumbers;
}

const NUMBER_RE = /-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][+-]?\d+)?/y;

class Parser {
  private pos = 0;
  readonly numbers: RawNumbers = new Map();

  constructor(private readonly text: string) {}

  parse(): unknown {
    const value = this.parseValue("");
    this.skipWs();
    if (this.pos !== this.text.length) {
      throw new SyntaxError(`trailing characters at ${this.pos}`);
    }
    return value;
  }

  private skipWs(): void {
    while (this.pos < this.text.length) {
      const c = this.text[this.pos];
      if (c === " " || c === "\t" || c === "\n" || c === "\r") this.pos += 1;
      else break;
    }
  }

  private parseValue(pointer: string): unknown {
    this.skipWs();
    const c = this.text[this.pos];
    if (c === undefined) throw new SyntaxError("unexpected end of input");
    if (c === "{") return this.parseObject(pointer);
    if (c === "[") return this.parseArray(pointer);
    if (c === '"') return this.parseString();
    if (this.text.startsWith("true", this.pos)) {
      this.pos += 4;
      return true;
    }
    if (this.text.startsWith("false", this.pos)) {
      this.pos += 5;
      return false;
    }
    if (this.text.startsWith("null", this.pos)) {
      this.pos += 4;
      return null;
    }
    return this.parseNumber(pointer);
  }

  private parseNumber(pointer: string): number {
    NUMBER_RE.lastIndex = this.pos;
    const m = NUMBER_RE.exec(this.text);
    if (!m || m.index !== this.pos) {
      throw new SyntaxError(`invalid value at ${this.pos}`);
    }
    this.pos += m[0].length;
    this.numbers.set(pointer, m[0]);
    return Number(m[0]);
  }

  private parseString(): string {
    if (this.text[this.pos] !== '"') {
      throw new SyntaxError(`expected string at ${this.pos}`);
    }
    this.pos += 1;
    let out = "";
    for (;;) {
      const c = this.text[this.pos];
      if (c === undefined) throw new SyntaxError("unterminated string");
      this.pos += 1;
      if (c === '"') return out;
      if (c !== "\\") {
        out += c;
        continue;
      }
      const esc = this.text[this.pos];
      this.pos += 1;
      switch (esc) {
        case '"': out += '"'; break;
        case "\\": out += "\\"; break;
        case "/": out += "/"; break;
        case "b": out += "\b"; break;
        case "f": out += "\f"; break;
        case "n": out += "\n"; break;
        case "r": out += "\r"; break;
        case "t": out += "\t"; break;
        case "u": {
          const hex = this.text.slice(this.pos, this.pos + 4);
          if (!/^[0-9a-fA-F]{4}$/.test(hex)) {
            throw new SyntaxError(`bad unicode escape at ${this.pos}`);
          }
          this.pos += 4;
          // surrogate pairs concatenate naturally through fromCharCode
          out += String.fromCharCode(parseInt(hex, 16));
          break;
        }
        default:
          throw new SyntaxError(`bad escape at ${this.pos}`);
      }
    }
  }

  private parseObject(pointer: string): Record<string, unknown> {
    this.pos += 1; // "{"
    const out: Record<string, unknown> = {};
    this.skipWs();
    if (this.text[this.pos] === "}") {
      this.pos += 1;
      return out;
    }
    for (;;) {
      this.skipWs();
      const key = this.parseString();
      this.skipWs();
      if (this.text[this.pos] !== ":") {
        throw new SyntaxError(`expected ":" at ${this.pos}`);
      }
      this.pos += 1;
      out[key] = this.parseValue(`${pointer}/${escapePointer(key)}`);
      this.skipWs();
      const c = this.text[this.pos];
      if (c === ",") {
        this.pos += 1;
        continue;
      }
      if (c === "}") {
        this.pos += 1;
        return out;
      }
      throw new SyntaxError(`expected "," or "}" at ${this.pos}`);
    }
  }

  private parseArray(pointer: string): unknown[] {
    this.pos += 1; // "["
    const out: unknown[] = [];
    this.skipWs();
    if (this.text[this.pos] === "]") {
      this.pos += 1;
      return out;
    }
    for (;;) {
      out.push(this.parseValue(`${pointer}/${out.length}`));
      this.skipWs();
      const c = this.text[this.pos];
      if (c === ",") {
        this.pos += 1;
        continue;
      }
      if (c === "]") {
        this.pos += 1;
        return out;
      }
      throw new SyntaxError(`expected "," or "]" at ${this.pos}`);
    }
  }
}

export function escapePointer(key: string): string {
  return key.replace(/~/g, "~0").replace(/\//g, "~1");
}

export function parseWithRaw(text: string): RawParse {
  const parser = new Parser(text);
  const value = parser.parse();
  return { value, numbers: parser.numbers };
}

/** The exact literal the server sent for the number at pointer, or a
 * plain rendering of the fallback when the pointer is unknown. */
export function rawNumber(
  numbers: RawNumbers, pointer: string, fallback?: unknown,
): string {
  const raw = numbers.get(pointer);
  if (raw !== undefined) return raw;
  return fallback === undefined ? "" : String(fallback);
}
