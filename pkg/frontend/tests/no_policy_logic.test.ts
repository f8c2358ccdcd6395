import { readFileSync, readdirSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

// The console must not evaluate policies itself: every verdict, reason,
// and rule id is rendered verbatim from gateway responses.
describe("no client-side policy logic", () => {
  it("client sources contain no rule evaluation code paths", () => {
    const srcDir = join(__dirname, "..", "src");
    const forbidden = [
      /evaluate[_A-Z]?[dD]isclosure/,
      /\bisAnyOf\b/,
      /\bprohibition-matched\b/,
      /\bconstraint/i,
      /default[-_]deny/i,
    ];
    for (const file of readdirSync(srcDir)) {
      const text = readFileSync(join(srcDir, file), "utf-8");
      for (const pattern of forbidden) {
        expect(pattern.test(text), `${file} matches ${pattern}`).toBe(false);
      }
    }
  });
});
