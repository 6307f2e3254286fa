#!/usr/bin/env python3
"""
speakerid - Command Line Launcher

This script checks that the toolkit's dependencies are importable and then
hands the command line over to ``speakerid.cli``.

Usage:
    python app.py simulate --output-dir corpus --channels M1 M3
    python app.py experiment configs/smoke.yaml

The script will:
1. Check the scientific stack is installed
2. Warn when no .env file is present (defaults are used)
3. Run the requested subcommand and exit with its code
"""

import sys
from pathlib import Path

# Add project root to path to import the package
PROJECT_ROOT = Path(__file__).parent.absolute()
sys.path.append(str(PROJECT_ROOT))

# Import name for each requirement
REQUIRED_PACKAGES = {
    "numpy": "numpy",
    "scipy": "scipy",
    "pandas": "pandas",
    "faiss-cpu": "faiss",
    "pydantic": "pydantic",
    "PyYAML": "yaml",
    "python-dotenv": "dotenv",
}


def print_banner():
    """Print launcher banner"""
    banner = """
    ╔══════════════════════════════════════════════════════════════╗
    ║                                                              ║
    ║            🎙️  SPEAKERID - LPCC SPEAKER RECOGNITION           ║
    ║                                                              ║
    ╚══════════════════════════════════════════════════════════════╝
    """
    print(banner, file=sys.stderr)


def check_dependencies():
    """Check if required dependencies are installed"""
    missing_packages = []
    for package, module in REQUIRED_PACKAGES.items():
        try:
            __import__(module)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"❌ Missing required packages: {', '.join(missing_packages)}", file=sys.stderr)
        print("📦 Please install them using: pip install -r requirements.txt", file=sys.stderr)
        return False
    return True


def check_environment():
    """Warn about a missing .env file; every setting has a default"""
    if not (Path.cwd() / ".env").exists() and not (PROJECT_ROOT / ".env").exists():
        print("⚠️  Warning: .env file not found, using SPEAKERID_* defaults (see .env.example)", file=sys.stderr)
    return True


def main(argv=None):
    """Pre-flight checks, then dispatch to the speakerid command line"""
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] in ("-h", "--help"):
        print_banner()

    if not check_dependencies():
        return 1
    check_environment()

    from speakerid.cli import main as cli_main

    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
