"""MCP prompts loader for the calibration workflow."""

from pathlib import Path


def _prompts_dir() -> Path:
    candidates = [
        Path("resources") / "prompts",
        Path(__file__).parent / "resources" / "prompts",
        Path(__file__).parent.parent.parent / "resources" / "prompts",
    ]
    for candidate in candidates:
        if candidate.is_dir():
            return candidate
    return candidates[0]


def load_prompts(mcp_server):
  """Register every markdown file in the prompts directory as a prompt.

  Args:
      mcp_server: The FastMCP server instance to register prompts with
  """
  for prompt_file in sorted(_prompts_dir().glob('*.md')):
    prompt_name = prompt_file.stem
    content = prompt_file.read_text(encoding='utf-8')
    lines = content.strip().split('\n')

    # First line is the title (skip the # prefix)
    title = lines[0].strip().lstrip('#').strip() if lines else prompt_name

    # Create a closure to capture the current values
    def make_prompt_handler(prompt_content, prompt_name, prompt_title):
      @mcp_server.prompt(name=prompt_name, description=prompt_title)
      async def handle_prompt():
        return prompt_content

      return handle_prompt

    make_prompt_handler(content, prompt_name, title)
