# Services test package initialization
