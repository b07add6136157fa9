import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "jsdom",
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
