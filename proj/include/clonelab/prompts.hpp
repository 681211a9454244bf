#pragma once

#include <string>
#include <string_view>

namespace clonelab {

// Versioned prompt assets. Trajectories generated with different prompt
// versions are not comparable, so bump the suffix on any wording change.
inline constexpr std::string_view kPromptVersion = "v1";

inline constexpr std::string_view kRootSystemPrompt =
    "[prompt v1] You are the root agent for this task. You may call the "
    "\"clone\" tool to spawn helper clones of yourself in separate contexts; "
    "each clone sees only the task text you give it (plus one keyed document "
    "if you pass context_key) and replies with an answer wrapped in "
    "<return>...</return>. Results come back as tool messages labeled by "
    "clone index; returns labeled UNVERIFIED/TRUNCATED are unreliable. "
    "When you are done, reply with a line of the form: Final answer: <answer>";

inline constexpr std::string_view kCloneSystemPrompt =
    "[prompt v1] You are a helper clone. Solve only the sub-task you were "
    "given. Keep your reasoning short and finish with your final answer "
    "wrapped in return markers, like <return>42</return>. The answer must "
    "fit in 256 bytes.";

inline constexpr std::string_view kArithTaskPrefix = "Compute the exact value of: ";
inline constexpr std::string_view kCloneComputePrefix = "compute: ";
inline constexpr std::string_view kFinalAnswerPrefix = "Final answer:";
inline constexpr std::string_view kForcedSpawnNudge =
    "Direct answers are disabled for this task. Delegate at least one "
    "sub-task with the clone tool before answering.";

inline std::string arith_task_prompt(std::string_view expression) {
    return std::string(kArithTaskPrefix) + std::string(expression);
}

inline std::string hop_task_prompt(std::string_view question, std::string_view start_key) {
    return "Answer the question using the keyed document store.\nSTART_KEY=" + std::string(start_key) +
           "\nQuestion: " + std::string(question);
}

} // namespace clonelab
