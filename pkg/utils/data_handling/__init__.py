"""Table export for evaluation and ablation reports."""
