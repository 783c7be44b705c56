"""chart-sentry: scan Helm chart manifests for misconfigurations, ask an LLM
to refactor the offending resources, verify the result, and report the numbers
with binomial confidence intervals."""

__version__ = "0.1.0"
