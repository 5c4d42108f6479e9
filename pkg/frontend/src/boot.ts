import { ApiClient } from "./api.js";
import { initApp } from "./main.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
initApp({ root, api: new ApiClient(""), win: window });
