#pragma once

// Multiple-choice benchmark scoring with per-category accuracy.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ipf {

enum class Category { consistency = 0, short_frame = 1, unexpected = 2, others = 3 };

inline constexpr std::size_t kCategoryCount = 4;
inline constexpr std::array<Category, kCategoryCount> kCategories{Category::consistency, Category::short_frame,
                                                                  Category::unexpected, Category::others};

/// "consistency", "short", "unexpected" or "others".
std::string_view category_name(Category c);
/// Throws InputError on an unknown label.
Category parse_category(std::string_view label);

struct QARecord {
    std::string question_id;
    Category category = Category::others;
    char correct_option = 'A';
    std::optional<char> predicted_option; ///< absent predictions score as wrong
};

struct CategoryScores {
    std::array<double, kCategoryCount> accuracy{};
    std::array<long, kCategoryCount> correct{};
    std::array<long, kCategoryCount> total{};
    long missing = 0;        ///< records without a prediction
    double macro_mean = 0.0; ///< unweighted mean over categories with questions
    double micro_mean = 0.0; ///< total correct / total questions
};

/// Throws InputError on duplicate question ids or bad option letters.
CategoryScores score(std::span<const QARecord> records);

/// Answer lines: "question_id category option". Prediction lines:
/// "question_id option" or "question_id category option". Commas and/or
/// whitespace separate fields; '#' starts a comment.
std::vector<QARecord> parse_answers(std::istream& in);
std::vector<QARecord> join_predictions(std::vector<QARecord> answers, std::istream& predictions);
std::vector<QARecord> read_scored_records(const std::filesystem::path& answers,
                                          const std::filesystem::path& predictions);

/// Aligned table for humans.
std::string format_table(const CategoryScores& s);
/// `key=value` lines for scripts.
std::string format_key_values(const CategoryScores& s);

} // namespace ipf
