# Utils test package initialization
