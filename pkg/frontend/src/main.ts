// Entry point: wire the app to the page. The API origin defaults to the
// page's host on port 8000 and can be overridden with ?api=http://host:port;
// the condition comes from ?condition= (default "auto").

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const params = new URLSearchParams(window.location.search);
const apiBase = params.get("api") ?? `${window.location.protocol}//${window.location.hostname}:8000`;
const condition = params.get("condition") ?? "auto";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const app = new App(root, new ApiClient(apiBase), window.localStorage);

document.getElementById("new-session")?.addEventListener("click", () => {
  app.reset();
  void app.start(condition);
});

void app.start(condition);
