/** Display formatting. Values come straight from API payloads; these
 * helpers only choose decimal places and placeholders. */

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Fraction as percentage points with one decimal: 0.8517 -> "85.2". */
export function pct(value: number): string {
  return (value * 100).toFixed(1);
}

/** Nullable fraction; missing statistics render as an em-style dash. */
export function pctOrDash(value: number | null | undefined): string {
  return value === null || value === undefined ? "–" : pct(value);
}

/** Signed delta in percentage points: 0.042 -> "+4.2". */
export function signedPct(value: number | null | undefined): string {
  if (value === null || value === undefined) return "–";
  const rendered = pct(Math.abs(value));
  return value < 0 ? `-${rendered}` : `+${rendered}`;
}

/** Probability with three decimals, for candidate scores. */
export function prob(value: number): string {
  return value.toFixed(3);
}
