#!/usr/bin/env python3
"""
Startup script for the FedSelectAPI HTTP surface
"""

import subprocess
import sys
from pathlib import Path


def check_requirements():
    """Check if all requirements are installed"""
    try:
        import cvxpy
        import fastapi
        import numpy
        import pandas
        import scipy
        import uvicorn
        print("✅ All required packages are installed")
        return True
    except ImportError as e:
        print(f"❌ Missing required package: {e}")
        print("Please run: pip install -r requirements.txt")
        return False


def check_environment():
    """Check environment configuration"""
    if not Path(".env").exists():
        print("⚠️  .env file not found. Run: python setup.py (defaults will be used)")
        return False
    print("✅ Environment configuration looks good")
    return True


def create_directories():
    """Create necessary directories"""
    for directory in ["results", "configs", "logs"]:
        Path(directory).mkdir(parents=True, exist_ok=True)


def main():
    """Main startup function"""
    print("🚀 Starting FedSelectAPI...")
    print("=" * 50)

    if not check_requirements():
        sys.exit(1)

    if not check_environment():
        print("⚠️  Continuing with warnings...")

    create_directories()

    from app.core.config import settings

    print("=" * 50)
    print("🎯 Starting FastAPI server...")
    print(f"📚 API Documentation: http://localhost:{settings.api_port}/docs")
    print(f"🔍 Health Check: http://localhost:{settings.api_port}/health")
    print("=" * 50)

    try:
        subprocess.run([
            sys.executable, "-m", "uvicorn",
            "app.main:app",
            "--host", settings.api_host,
            "--port", str(settings.api_port),
        ])
    except KeyboardInterrupt:
        print("\n👋 Shutting down FedSelectAPI...")
    except Exception as e:
        print(f"❌ Error starting server: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
