import { GatewayClient } from "./api.js";
import { ChatView } from "./chat.js";
import { TraceExplorer } from "./explorer.js";

// Single-page console: a consumer chat tab and a provider trace explorer
// tab, both talking only to the documented gateway JSON API.

interface ConsoleConfig {
  gatewayUrl: string;
  adminKey: string | null;
}

function readConfig(): ConsoleConfig {
  const params = new URLSearchParams(window.location.search);
  return {
    gatewayUrl:
      params.get("gateway") ??
      window.localStorage.getItem("qagate-gateway-url") ??
      "http://127.0.0.1:8080",
    adminKey:
      params.get("adminKey") ?? window.localStorage.getItem("qagate-admin-key"),
  };
}

export function mountConsole(root: HTMLElement, config?: ConsoleConfig): {
  chat: ChatView;
  explorer: TraceExplorer;
} {
  const resolved = config ?? readConfig();
  const client = new GatewayClient(resolved.gatewayUrl, resolved.adminKey);

  root.innerHTML = "";
  const tabs = document.createElement("nav");
  tabs.className = "tabs";
  const chatTab = document.createElement("button");
  chatTab.className = "tab tab-chat active";
  chatTab.textContent = "Consumer chat";
  const adminTab = document.createElement("button");
  adminTab.className = "tab tab-admin";
  adminTab.textContent = "Trace explorer";
  tabs.append(chatTab, adminTab);

  const chatPane = document.createElement("section");
  chatPane.className = "pane pane-chat";
  const adminPane = document.createElement("section");
  adminPane.className = "pane pane-admin";
  adminPane.style.display = "none";

  chatTab.addEventListener("click", () => {
    chatPane.style.display = "block";
    adminPane.style.display = "none";
    chatTab.classList.add("active");
    adminTab.classList.remove("active");
  });
  adminTab.addEventListener("click", () => {
    chatPane.style.display = "none";
    adminPane.style.display = "block";
    adminTab.classList.add("active");
    chatTab.classList.remove("active");
  });

  root.append(tabs, chatPane, adminPane);
  const chat = new ChatView(chatPane, client);
  const explorer = new TraceExplorer(adminPane, client);
  return { chat, explorer };
}

declare global {
  interface Window {
    qagateConsole?: ReturnType<typeof mountConsole>;
  }
}

if (typeof document !== "undefined" && document.getElementById("console-root")) {
  window.qagateConsole = mountConsole(
    document.getElementById("console-root") as HTMLElement,
  );
}
