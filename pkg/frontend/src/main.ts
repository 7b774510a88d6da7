import { consoleUrl } from "./transport";
import { LineTransport } from "./transport";
import { SessionView } from "./session";
import { ConsoleUI } from "./ui";

const params = new URLSearchParams(location.search);
const host = params.get("host") ?? location.hostname ?? "127.0.0.1";
const port = Number(params.get("port") ?? location.port ?? "8000");

const session = new SessionView();
const transport = new LineTransport({ url: consoleUrl(host, port), session });

const root = document.getElementById("app");
if (root) {
  new ConsoleUI(root, session);
}
transport.connect();
setInterval(() => session.tick(), 1000);
