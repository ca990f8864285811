"""Text assets for the builtin maze layouts."""
