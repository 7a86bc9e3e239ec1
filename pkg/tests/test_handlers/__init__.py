# Handlers test package initialization
