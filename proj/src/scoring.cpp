#include "ipformer/scoring.hpp"

#include "ipformer/common.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ipf {
namespace {

std::vector<std::string> split_fields(std::string line)
{
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<std::string> out;
    for (std::string f; ls >> f;) out.push_back(f);
    return out;
}

char parse_option(const std::string& text, int line_no)
{
    if (text.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        if (c >= 'A' && c <= 'D') return c;
    }
    throw InputError("line " + std::to_string(line_no) + ": option must be one of A-D, got '" + text + "'");
}

} // namespace

std::string_view category_name(Category c)
{
    switch (c) {
    case Category::consistency: return "consistency";
    case Category::short_frame: return "short";
    case Category::unexpected: return "unexpected";
    case Category::others: return "others";
    }
    return "?";
}

Category parse_category(std::string_view label)
{
    for (Category c : kCategories) {
        if (category_name(c) == label) return c;
    }
    throw InputError("unknown category '" + std::string(label) + "'");
}

CategoryScores score(std::span<const QARecord> records)
{
    CategoryScores s;
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.question_id).second) throw InputError("duplicate question_id '" + r.question_id + "'");
        const auto k = static_cast<std::size_t>(r.category);
        if (k >= kCategoryCount) throw InputError("unknown category for '" + r.question_id + "'");
        ++s.total[k];
        if (!r.predicted_option) {
            ++s.missing;
        } else if (*r.predicted_option == r.correct_option) {
            ++s.correct[k];
        }
    }

    long all_correct = 0, all_total = 0;
    double acc_sum = 0.0;
    int populated = 0;
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
        all_correct += s.correct[k];
        all_total += s.total[k];
        if (s.total[k] > 0) {
            s.accuracy[k] = static_cast<double>(s.correct[k]) / static_cast<double>(s.total[k]);
            acc_sum += s.accuracy[k];
            ++populated;
        }
    }
    s.macro_mean = populated ? acc_sum / populated : 0.0;
    s.micro_mean = all_total ? static_cast<double>(all_correct) / static_cast<double>(all_total) : 0.0;
    return s;
}

std::vector<QARecord> parse_answers(std::istream& in)
{
    std::vector<QARecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto f = split_fields(line);
        if (f.empty()) continue;
        if (f.size() != 3) {
            throw InputError("answers line " + std::to_string(line_no) + ": expected 'question_id category option'");
        }
        QARecord r;
        r.question_id = f[0];
        try {
            r.category = parse_category(f[1]);
        } catch (const InputError& e) {
            throw InputError("answers line " + std::to_string(line_no) + ": " + e.what());
        }
        r.correct_option = parse_option(f[2], line_no);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<QARecord> join_predictions(std::vector<QARecord> answers, std::istream& predictions)
{
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (!index.emplace(answers[i].question_id, i).second) {
            throw InputError("duplicate question_id '" + answers[i].question_id + "' in answers");
        }
    }
    std::string line;
    int line_no = 0;
    while (std::getline(predictions, line)) {
        ++line_no;
        const auto f = split_fields(line);
        if (f.empty()) continue;
        if (f.size() != 2 && f.size() != 3) {
            throw InputError("predictions line " + std::to_string(line_no) + ": expected 'question_id [category] option'");
        }
        auto it = index.find(f[0]);
        if (it == index.end()) {
            throw InputError("predictions line " + std::to_string(line_no) + ": unknown question_id '" + f[0] + "'");
        }
        QARecord& r = answers[it->second];
        if (f.size() == 3 && parse_category(f[1]) != r.category) {
            throw InputError("predictions line " + std::to_string(line_no) + ": category disagrees with answers");
        }
        if (r.predicted_option) {
            throw InputError("predictions line " + std::to_string(line_no) + ": duplicate prediction for '" + f[0] + "'");
        }
        r.predicted_option = parse_option(f.back(), line_no);
    }
    return answers;
}

std::vector<QARecord> read_scored_records(const std::filesystem::path& answers,
                                          const std::filesystem::path& predictions)
{
    std::ifstream a(answers);
    if (!a) throw InputError("cannot open " + answers.string());
    std::ifstream p(predictions);
    if (!p) throw InputError("cannot open " + predictions.string());
    return join_predictions(parse_answers(a), p);
}

std::string format_table(const CategoryScores& s)
{
    std::ostringstream os;
    os << std::left << std::setw(14) << "category" << std::right << std::setw(9) << "correct" << std::setw(8)
       << "total" << std::setw(11) << "accuracy" << '\n';
    for (Category c : kCategories) {
        const auto k = static_cast<std::size_t>(c);
        os << std::left << std::setw(14) << category_name(c) << std::right << std::setw(9) << s.correct[k]
           << std::setw(8) << s.total[k] << std::setw(10) << std::fixed << std::setprecision(2)
           << 100.0 * s.accuracy[k] << "%\n";
    }
    os << std::left << std::setw(31) << "macro mean" << std::right << std::setw(10) << 100.0 * s.macro_mean << "%\n";
    os << std::left << std::setw(31) << "micro mean" << std::right << std::setw(10) << 100.0 * s.micro_mean << "%\n";
    os << std::left << std::setw(31) << "missing predictions" << std::right << std::setw(11) << s.missing << '\n';
    return os.str();
}

std::string format_key_values(const CategoryScores& s)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    for (Category c : kCategories) {
        const auto k = static_cast<std::size_t>(c);
        os << category_name(c) << "_accuracy=" << s.accuracy[k] << '\n';
        os << category_name(c) << "_correct=" << s.correct[k] << '\n';
        os << category_name(c) << "_total=" << s.total[k] << '\n';
    }
    os << "macro_mean=" << s.macro_mean << '\n';
    os << "micro_mean=" << s.micro_mean << '\n';
    os << "missing=" << s.missing << '\n';
    return os.str();
}

} // namespace ipf
