#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace l2mac::prompts {

/// Domain system message, included in every context window.
std::string_view system_message();

/// Bootstrap (self-programming) instruction wrapping the user's requirements.
std::string bootstrap_message(std::string_view user_requirements);

/// Cycle message that loads an instruction into a fresh window.
std::string cycle_start(std::string_view instruction, const std::vector<std::string>& files,
                        std::string_view previous_summary, const std::vector<std::string>& function_names);

/// Cycle message appended after every turn while an instruction is running.
std::string cycle_continue(std::string_view instruction, const std::vector<std::string>& files,
                           const std::vector<std::string>& function_names);

/// Summary request when an instruction completed cleanly.
std::string_view summary_for_next_step();

/// Summary request when the window overflowed and the instruction restarts.
std::string_view summary_for_restart();

/// Features % judge prompt. `code_files` is the rendered codebase.
std::string features_judge(std::string_view user_requirements, std::string_view code_files);

/// ['a.py', 'tests/test_a.py'], the Python list repr the LLM sees.
std::string render_file_list(const std::vector<std::string>& files);

/// `a`, `b`, `c`
std::string render_function_names(const std::vector<std::string>& names);

} // namespace l2mac::prompts
