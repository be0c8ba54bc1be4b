/**
 * Entry point: wires the console to the service named in the URL.
 *
 * Query parameters:
 *   ?service=http://host:port   service base URL (default: same origin)
 *   ?session=<id>               restore an existing session after reload
 */

import { ApiClient } from "./api.js";
import { ConductConsole } from "./ui.js";

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("service") ?? "";
  const sessionId = params.get("session");
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const api = new ApiClient(baseUrl);
  const console_ = new ConductConsole(api, root, (newSession) => {
    const next = new URLSearchParams(window.location.search);
    if (newSession) next.set("session", newSession);
    else next.delete("session");
    window.history.replaceState(null, "", `?${next}`);
  });
  void console_.start(sessionId);
}

main();
