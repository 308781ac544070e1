"""Command-line surface: one module per command plus the shared configuration"""
