#!/usr/bin/env python3
"""
Setup script for FedSelectAPI
"""

import json
import subprocess
import sys
from pathlib import Path


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required")
        print(f"   Current version: {sys.version}")
        return False
    print(f"✅ Python {sys.version.split()[0]} detected")
    return True


def install_requirements():
    """Install Python requirements"""
    print("📦 Installing Python requirements...")
    try:
        subprocess.run([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"], check=True)
        print("✅ Requirements installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error installing requirements: {e}")
        return False


def create_directories():
    """Create necessary directories"""
    directories = ["results", "configs", "logs"]

    for directory in directories:
        Path(directory).mkdir(parents=True, exist_ok=True)
        print(f"✅ Created directory: {directory}")


def create_default_config():
    """Write the default experiment document"""
    config_file = Path("configs/default.json")
    if config_file.exists():
        print(f"✅ Keeping existing config: {config_file}")
        return True
    try:
        from app.core.config import ExperimentConfig
    except ImportError as e:
        print(f"❌ Cannot import the config layer: {e}")
        return False

    config_file.write_text(json.dumps(ExperimentConfig().model_dump(mode="json"), indent=2))
    print(f"✅ Default config written to: {config_file}")
    return True


def create_simple_env():
    """Create a .env file with the process settings"""
    env_file = Path(".env")
    if env_file.exists():
        return
    print("📝 Creating .env file...")

    env_content = """# FedSelectAPI Configuration

# Application
PROJECT_NAME=FedSelectAPI
DEBUG=false
LOG_LEVEL=INFO

# Files
RESULTS_DIRECTORY=./results

# HTTP surface
API_HOST=0.0.0.0
API_PORT=8000

# Parallel method runs inside bench/sweep
WORKER_THREADS=1
"""
    env_file.write_text(env_content)
    print("✅ .env file created")


def main():
    """Main setup function"""
    print("🔧 FedSelectAPI Setup")
    print("=" * 50)

    if not check_python_version():
        sys.exit(1)

    if not install_requirements():
        sys.exit(1)

    create_directories()
    create_simple_env()
    if not create_default_config():
        sys.exit(1)

    print("=" * 50)
    print("🎉 Setup completed successfully!")
    print()
    print("📝 Next steps:")
    print("1. Solve one round:   python -m app solve --config configs/default.json --out-dir results/solve")
    print("2. Run a benchmark:   python -m app bench --config configs/default.json --rounds 50")
    print("3. Start the API:     python start.py")
    print("=" * 50)


if __name__ == "__main__":
    main()
