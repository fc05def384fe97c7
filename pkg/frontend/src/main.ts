import { TutorApi } from "./api.js";
import { TutorApp } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("page is missing the #app root");

const params = new URLSearchParams(window.location.search);
const app = new TutorApp(root, new TutorApi(params.get("api") ?? ""));
void app.start(params.get("session"));
