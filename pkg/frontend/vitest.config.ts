import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    globals: true,
    testTimeout: 120_000,
    hookTimeout: 60_000,
    // the integration suites each own one live hub process
    fileParallelism: false,
  },
});
