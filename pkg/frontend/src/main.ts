import { ApiClient } from "./api.js";
import { createApp } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "";

document.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (root) createApp(root, new ApiClient(baseUrl));
});
