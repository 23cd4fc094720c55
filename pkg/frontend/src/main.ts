/**
 * Browser entry point.  Query parameters pick the service and bundle:
 * ?api=http://127.0.0.1:8601&bundle=desk.egava&size=512
 */

import { createClient } from "./api.js";
import { createEditor } from "./app.js";

const query = new URLSearchParams(window.location.search);
const api = query.get("api") ?? "http://127.0.0.1:8601";
const bundle = query.get("bundle") ?? "desk.egava";
const size = Number(query.get("size") ?? 512);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

createEditor({
  client: createClient(api),
  doc: document,
  root,
  bundle,
  size,
  storage: window.localStorage,
}).catch((error) => {
  root.textContent = error instanceof Error ? error.message : String(error);
});
