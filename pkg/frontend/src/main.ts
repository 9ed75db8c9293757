import { connect } from "./ui.js";

const root = document.getElementById("app");
if (root) {
  const params = new URLSearchParams(window.location.search);
  const url = params.get("server") ?? "ws://127.0.0.1:8765/ws";
  connect(url, root).catch((err) => {
    root.textContent = String(err);
  });
}
