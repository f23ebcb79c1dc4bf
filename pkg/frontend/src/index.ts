/**
 * Browser workbench for the policy-analytics gateway: a criterion language
 * mirror that agrees with the server token for token, a policy-tree editor
 * with live diagnostics, a thin HTTP client with run polling, and pure view
 * models that render gateway responses verbatim.
 */
export * from "./criteria.js";
export * from "./tree.js";
export * from "./api.js";
export * from "./views.js";
