import os

# Gunicorn config variables
loglevel = "info"
capture_output = True
enable_stdio_inheritance = True

# Worker processes
# Each request may fan a run out over WORKERS threads, so keep process count low
workers = int(os.environ.get("GUNICORN_WORKERS", "2"))
worker_class = "sync"
threads = 2

# Listening
bind = "0.0.0.0:5000"

# Timeouts
# Full runs and benchmark suites take minutes
timeout = int(os.environ.get("GUNICORN_TIMEOUT", "900"))
keepalive = 5

# Security
limit_request_line = 4094
limit_request_fields = 100
limit_request_field_size = 8190

# Use stdout/stderr for logging instead of files
accesslog = "-"
errorlog = "-"
