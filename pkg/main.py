"""
Agri-GNN - Main Entry Point
Crop-yield prediction from plot graphs: command-line driver
"""
import os
import sys
import signal
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Setup logging
log_file = os.getenv('LOG_FILE', './logs/agri_gnn.log')
os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)

logging.basicConfig(
    level=getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(log_file),
        logging.StreamHandler(sys.stderr)
    ]
)

logger = logging.getLogger(__name__)


def validate_environment():
    """Validate optional environment settings before any stage runs"""
    config_path = os.getenv('AGRIGNN_CONFIG')
    if config_path and not os.path.isfile(config_path):
        logger.error(f"AGRIGNN_CONFIG points to a missing file: {config_path}")
        sys.exit(4)

    logger.debug("Environment validation passed")


def handle_exit(sig, frame):
    """Graceful shutdown handler"""
    signal_name = signal.Signals(sig).name
    logger.info(f"Received {signal_name}. Stopping; outputs written so far are kept")
    sys.exit(130 if sig == signal.SIGINT else 143)


def main():
    """Main entry point"""
    signal.signal(signal.SIGTERM, handle_exit)
    validate_environment()

    from integration.cli import run_cli

    try:
        code = run_cli(sys.argv[1:])
    except KeyboardInterrupt:
        logger.info("Run stopped by user")
        code = 130
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    main()
