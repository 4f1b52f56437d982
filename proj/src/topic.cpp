#include "sdflmq/transport/topic.hpp"

#include "sdflmq/errors.hpp"

namespace sdflmq::transport {

namespace {

void check_common(std::string_view path, const char* what) {
    if (path.empty()) {
        throw ValidationError(std::string(what) + " must be non-empty");
    }
    if (path.find('\0') != std::string_view::npos) {
        throw ValidationError(std::string(what) + " must not contain NUL");
    }
}

} // namespace

std::vector<std::string_view> split_levels(std::string_view path) {
    std::vector<std::string_view> levels;
    std::size_t start = 0;
    while (true) {
        std::size_t slash = path.find('/', start);
        if (slash == std::string_view::npos) {
            levels.push_back(path.substr(start));
            break;
        }
        levels.push_back(path.substr(start, slash - start));
        start = slash + 1;
    }
    return levels;
}

Topic::Topic(std::string path) : path_(std::move(path)) {
    check_common(path_, "topic");
    if (path_.find('+') != std::string::npos || path_.find('#') != std::string::npos) {
        throw ValidationError("topic must not contain wildcards: " + path_);
    }
}

std::vector<std::string_view> Topic::levels() const {
    return split_levels(path_);
}

TopicFilter::TopicFilter(std::string path) : path_(std::move(path)) {
    check_common(path_, "topic filter");
    const auto levels = split_levels(path_);
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto level = levels[i];
        if (level == "+") {
            continue;
        }
        if (level == "#") {
            if (i + 1 != levels.size()) {
                throw ValidationError("'#' is legal only as the last level: " + path_);
            }
            continue;
        }
        // Wildcard characters must occupy an entire level.
        if (level.find('+') != std::string_view::npos ||
            level.find('#') != std::string_view::npos) {
            throw ValidationError("wildcard must occupy an entire level: " + path_);
        }
    }
}

std::vector<std::string_view> TopicFilter::levels() const {
    return split_levels(path_);
}

bool topic_matches(const TopicFilter& filter, const Topic& topic) {
    const auto f = filter.levels();
    const auto t = topic.levels();

    // [MQTT-4.7.2-1]: wildcard-leading filters never match '$'-prefixed topics.
    if (!t.empty() && !t[0].empty() && t[0][0] == '$' && (f[0] == "+" || f[0] == "#")) {
        return false;
    }

    std::size_t ti = 0;
    for (const auto level : f) {
        if (level == "#") {
            return true; // matches the parent level too, e.g. "a/#" matches "a"
        }
        if (ti >= t.size()) {
            return false;
        }
        if (level != "+" && level != t[ti]) {
            return false;
        }
        ++ti;
    }
    return ti == t.size();
}

} // namespace sdflmq::transport
