// Tiny DOM helpers; no framework.

export function h<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | boolean | ((ev: Event) => void)> = {},
  ...children: (Node | string | null)[]
): HTMLElementTagNameMap[K] {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      el.addEventListener(key.replace(/^on/, ""), value);
    } else if (typeof value === "boolean") {
      if (value) el.setAttribute(key, "");
    } else if (key === "class") {
      el.className = value;
    } else if (key.startsWith("data-")) {
      el.setAttribute(key, value);
    } else {
      (el as unknown as Record<string, unknown>)[key] = value;
    }
  }
  for (const child of children) {
    if (child === null) continue;
    el.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return el;
}

export function clear(el: HTMLElement): HTMLElement {
  el.replaceChildren();
  return el;
}

export function table(columns: string[], rows: (string | number | Node | null)[][]): HTMLTableElement {
  const head = h("tr", {}, ...columns.map((c) => h("th", {}, c)));
  const body = rows.map((row) =>
    h("tr", {}, ...row.map((cell) =>
      h("td", {}, cell === null ? "" : cell instanceof Node ? cell : String(cell)),
    )),
  );
  return h("table", { class: "data" }, h("thead", {}, head), h("tbody", {}, ...body));
}

export function fmt(value: number | null | undefined, digits = 4): string {
  if (value === null || value === undefined) return "";
  return Number(value).toFixed(digits);
}
