# Shared utilities: configuration, errors, logging, hashing
