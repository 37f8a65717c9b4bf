import logging
import sys
from datetime import datetime
from colorama import init, Fore, Back, Style
from typing import Optional


# Initialize colorama for cross-platform colored output
init(autoreset=True)


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colored output for console"""

    # Color mappings for different log levels
    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.RED + Back.WHITE
    }

    # Component color mappings
    COMPONENT_COLORS = {
        'DATA': Fore.BLUE,
        'GRAPH': Fore.WHITE,
        'RDS': Fore.MAGENTA,
        'ESTIMATE': Fore.GREEN,
        'MODEL': Fore.CYAN,
        'TREE': Fore.BLUE,
        'ERGM': Fore.MAGENTA,
        'SYSTEM': Fore.YELLOW
    }

    def format(self, record):
        level_color = self.COLORS.get(record.levelname, Fore.WHITE)
        message = record.getMessage()

        # Extract component from message if present
        component = None
        component_color = Fore.WHITE
        for comp, color in self.COMPONENT_COLORS.items():
            if message.startswith(f"{comp}:"):
                component = comp
                component_color = color
                break

        timestamp = datetime.now().strftime("%H:%M:%S.%f")[:-3]

        if component:
            body = message.split(':', 1)[1].strip()
            return (
                f"{Fore.WHITE}[{timestamp}] "
                f"{level_color}{record.levelname:<8} "
                f"{component_color}{component}:{Style.RESET_ALL} "
                f"{body}"
            )

        return (
            f"{Fore.WHITE}[{timestamp}] "
            f"{level_color}{record.levelname:<8} "
            f"{Style.RESET_ALL}{message}"
        )


class LoggerSetup:
    """Setup and configure logging for the toolkit"""

    @staticmethod
    def setup_logging(
        console_level: str = "INFO",
        file_level: str = "DEBUG",
        log_file: Optional[str] = None,
        console_enabled: bool = True
    ) -> logging.Logger:
        """Setup logging configuration

        Args:
            console_level: Log level for console output
            file_level: Log level for file output
            log_file: Path to log file
            console_enabled: Whether to enable console logging

        Returns:
            Configured root logger
        """
        root_logger = logging.getLogger()
        root_logger.setLevel(logging.DEBUG)

        # Remove any existing handlers
        root_logger.handlers = []

        if console_enabled:
            # Tables go to stdout, so the console log goes to stderr
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setLevel(getattr(logging, console_level.upper()))
            console_handler.setFormatter(ColoredFormatter('%(message)s'))
            root_logger.addHandler(console_handler)

        if log_file:
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(getattr(logging, file_level.upper()))
            file_formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            )
            file_handler.setFormatter(file_formatter)
            root_logger.addHandler(file_handler)

        return root_logger

    @staticmethod
    def get_logger(name: str) -> logging.Logger:
        """Get a logger instance with the given name"""
        return logging.getLogger(name)


# Utility functions for consistent logging patterns
def log_data_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a survey-data event with consistent formatting"""
    getattr(logger, level.lower())(f"DATA: {message}")


def log_graph_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a population-graph event with consistent formatting"""
    getattr(logger, level.lower())(f"GRAPH: {message}")


def log_rds_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a recruitment/forest event with consistent formatting"""
    getattr(logger, level.lower())(f"RDS: {message}")


def log_estimate_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log an estimation event with consistent formatting"""
    getattr(logger, level.lower())(f"ESTIMATE: {message}")


def log_model_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a count-model event with consistent formatting"""
    getattr(logger, level.lower())(f"MODEL: {message}")


def log_tree_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a tree-analysis event with consistent formatting"""
    getattr(logger, level.lower())(f"TREE: {message}")


def log_ergm_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log an ERGM event with consistent formatting"""
    getattr(logger, level.lower())(f"ERGM: {message}")


def log_system_event(logger: logging.Logger, message: str, level: str = "INFO"):
    """Log a system-related event with consistent formatting"""
    getattr(logger, level.lower())(f"SYSTEM: {message}")
